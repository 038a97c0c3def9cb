#include "vreg/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vreg/errors.hpp"
#include "vreg/rng.hpp"

namespace vreg {

void RateGrid::validate() const {
    if (rates_w.empty()) throw ConfigError("rate grid needs at least one rate");
    for (std::size_t i = 0; i + 1 < rates_w.size(); ++i)
        if (!(rates_w[i] < rates_w[i + 1]))
            throw ConfigError("rate grid must be strictly increasing");
    for (double r : rates_w)
        if (!std::isfinite(r)) throw ConfigError("rate grid entries must be finite");
}

double RateGrid::max_gap_w() const {
    double gap = 0.0;
    for (std::size_t i = 0; i + 1 < rates_w.size(); ++i)
        gap = std::max(gap, rates_w[i + 1] - rates_w[i]);
    return gap;
}

RateGrid uniform_rate_grid(double step_w, int count) {
    RateGrid grid;
    grid.rates_w.reserve(count);
    for (int i = 0; i < count; ++i) grid.rates_w.push_back(step_w * i);
    grid.validate();
    return grid;
}

Bracket bracket_rates(double c_star_w, const RateGrid& grid) {
    const auto& rates = grid.rates_w;
    if (rates.empty()) throw ConfigError("rate grid needs at least one rate");
    if (c_star_w < rates.front() || c_star_w > rates.back())
        throw std::out_of_range("relaxed setpoint " + std::to_string(c_star_w) +
                                " W outside rate grid span [" + std::to_string(rates.front()) +
                                ", " + std::to_string(rates.back()) + "]");
    auto upper = std::lower_bound(rates.begin(), rates.end(), c_star_w);
    if (*upper == c_star_w) return Bracket{c_star_w, c_star_w};
    return Bracket{*(upper - 1), *upper};
}

RoundingOutcome two_point_sample(double c_star_w, const Bracket& bracket, std::mt19937_64& rng,
                                 std::uint64_t substream_key) {
    RoundingOutcome out;
    out.bracket = bracket;
    out.substream = substream_key;
    if (bracket.hi_w == bracket.lo_w) {
        out.prob_upper = 1.0;
        out.realized_w = bracket.hi_w;
        return out;
    }
    out.prob_upper = (c_star_w - bracket.lo_w) / (bracket.hi_w - bracket.lo_w);
    out.realized_w = uniform01(rng) < out.prob_upper ? bracket.hi_w : bracket.lo_w;
    return out;
}

Eigen::VectorXd variance_upper_bound(const LinearGridModel& model,
                                     const std::vector<SlowDeviceSpan>& spans,
                                     double power_base_kva) {
    const double base_w = power_base_kva * 1000.0;
    double max_span_pu = 0.0;
    for (const auto& s : spans) max_span_pu = std::max(max_span_pu, s.span_w / base_w);
    const double device_count = static_cast<double>(spans.size());
    const Eigen::VectorXd row_sq = model.R.array().square().rowwise().sum();
    return (device_count / 4.0) * max_span_pu * max_span_pu * row_sq;
}

Eigen::VectorXd variance_upper_bound_per_device(const LinearGridModel& model,
                                                const std::vector<SlowDeviceSpan>& spans,
                                                double power_base_kva) {
    const double base_w = power_base_kva * 1000.0;
    double span_sq_sum = 0.0;
    for (const auto& s : spans) {
        const double pu = s.span_w / base_w;
        span_sq_sum += pu * pu;
    }
    const Eigen::VectorXd row_sq = model.R.array().square().rowwise().sum();
    return (span_sq_sum / 4.0) * row_sq;
}

RobustBounds robust_limits(const Eigen::VectorXd& v_lower, const Eigen::VectorXd& v_upper,
                           double margin) {
    if (margin < 0.0) throw ConfigError("robust margin must be nonnegative");
    RobustBounds out;
    out.margin = margin;
    out.v_lower = v_lower.array() + margin;
    out.v_upper = v_upper.array() - margin;
    if (!((out.v_lower.array() < out.v_upper.array()).all()))
        throw ConfigError("robust margin " + std::to_string(margin) +
                          " leaves an empty voltage band");
    return out;
}

}  // namespace vreg
