#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "vreg/feeder.hpp"

namespace vreg {

/// Feasible consumption rates of a discrete device, in watts, strictly
/// increasing.
struct RateGrid {
    std::vector<double> rates_w;

    void validate() const;
    double min_rate() const { return rates_w.front(); }
    double max_rate() const { return rates_w.back(); }
    /// Largest adjacent spacing; the worst-case bracket span for this grid.
    double max_gap_w() const;
};

RateGrid uniform_rate_grid(double step_w, int count);

struct Bracket {
    double lo_w = 0.0;
    double hi_w = 0.0;
};

/// The two adjacent grid rates around a relaxed setpoint; degenerate when
/// the setpoint sits exactly on a rate. Throws std::out_of_range when the
/// setpoint lies outside the grid span.
Bracket bracket_rates(double c_star_w, const RateGrid& grid);

struct RoundingOutcome {
    Bracket bracket;
    double prob_upper = 0.0;
    double realized_w = 0.0;
    std::uint64_t substream = 0;
};

/// Two-point draw with P(upper) = (c* - lo)/(hi - lo), so the expectation
/// of the realized rate equals the relaxed setpoint exactly.
RoundingOutcome two_point_sample(double c_star_w, const Bracket& bracket, std::mt19937_64& rng,
                                 std::uint64_t substream_key = 0);

struct SlowDeviceSpan {
    int node = 0;        // load node index, 1-based like the feeder
    double span_w = 0.0; // bracket span (upper rate - lower rate)
};

/// Per-node voltage variance bound: (D_S / 4) * sum_j R_ij^2 * max span^2,
/// spans converted to per-unit on power_base_kva.
Eigen::VectorXd variance_upper_bound(const LinearGridModel& model,
                                     const std::vector<SlowDeviceSpan>& spans,
                                     double power_base_kva);

/// Tighter diagnostic replacing D_S * max span^2 with the sum of squared
/// per-device spans.
Eigen::VectorXd variance_upper_bound_per_device(const LinearGridModel& model,
                                                const std::vector<SlowDeviceSpan>& spans,
                                                double power_base_kva);

/// Limits tightened by a symmetric margin. Running the dual update against
/// the tightened band caps the chance of straying past the original limits
/// at Var(v_i) / (2 delta^2) per side (Chebyshev).
struct RobustBounds {
    double margin = 0.0;
    Eigen::VectorXd v_lower;
    Eigen::VectorXd v_upper;
};

RobustBounds robust_limits(const Eigen::VectorXd& v_lower, const Eigen::VectorXd& v_upper,
                           double margin);

}  // namespace vreg
