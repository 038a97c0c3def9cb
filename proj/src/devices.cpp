#include "vreg/devices.hpp"

#include <algorithm>
#include <cmath>

#include "vreg/errors.hpp"

namespace vreg {

bool PvSpec::feasible(double p_pu, double q_pu, double tolerance) const {
    if (p_pu < -tolerance || p_pu > p_av_pu + tolerance) return false;
    return p_pu * p_pu + q_pu * q_pu <= eta_pu * eta_pu + tolerance;
}

PvSetpoint project_to_pv_set(const PvSpec& spec, double p_pu, double q_pu) {
    // Candidates cover every KKT pattern of {0 <= p <= p_av} x {disk}.
    const double eta = spec.eta_pu;
    PvSetpoint best;
    double best_dist = std::numeric_limits<double>::infinity();
    auto consider = [&](double p, double q) {
        if (p < -1e-15 || p > spec.p_av_pu + 1e-15) return;
        if (p * p + q * q > eta * eta * (1.0 + 1e-12) + 1e-300) return;
        const double d = (p - p_pu) * (p - p_pu) + (q - q_pu) * (q - q_pu);
        if (d < best_dist) {
            best_dist = d;
            best = PvSetpoint{p, q};
        }
    };
    // Box clamp inside the disk.
    consider(std::clamp(p_pu, 0.0, spec.p_av_pu), q_pu);
    // Radial scaling onto the circle.
    const double norm = std::hypot(p_pu, q_pu);
    if (norm > 0.0) consider(p_pu * eta / norm, q_pu * eta / norm);
    // Box edges intersected with the disk.
    consider(0.0, std::clamp(q_pu, -eta, eta));
    if (spec.p_av_pu <= eta) {
        const double q_cap = std::sqrt(std::max(0.0, eta * eta - spec.p_av_pu * spec.p_av_pu));
        consider(spec.p_av_pu, std::clamp(q_pu, -q_cap, q_cap));
    }
    return best;
}

PvSetpoint pv_best_response(const PvSpec& spec, double alpha, double beta, double tolerance) {
    if (!(spec.eta_pu > 0.0)) throw ConfigError("PV apparent capacity must be positive");
    if (spec.p_av_pu < 0.0) throw ConfigError("PV available power must be nonnegative");
    if (!(spec.cost_p > 0.0) || !(spec.cost_q > 0.0))
        throw ConfigError("PV cost weights must be positive for a strongly convex cost");
    if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");

    // Interior/box stationary point.
    const double p_free = spec.p_av_pu + alpha / (2.0 * spec.cost_p);
    const double q_free = beta / (2.0 * spec.cost_q);
    const double p_box = std::clamp(p_free, 0.0, spec.p_av_pu);
    const double eta_sq = spec.eta_pu * spec.eta_pu;
    if (p_box * p_box + q_free * q_free <= eta_sq) return PvSetpoint{p_box, q_free};

    // Capacity circle active: with multiplier lam, the box-clamped
    // stationary point is p(lam) = clamp((2 c_p p_av + alpha)/(2(c_p+lam)),
    // 0, p_av), q(lam) = beta/(2(c_q+lam)); its norm decreases in lam.
    auto point_at = [&](double lam) {
        const double p =
            std::clamp((2.0 * spec.cost_p * spec.p_av_pu + alpha) / (2.0 * (spec.cost_p + lam)),
                       0.0, spec.p_av_pu);
        const double q = beta / (2.0 * (spec.cost_q + lam));
        return PvSetpoint{p, q};
    };
    auto norm_sq = [&](const PvSetpoint& z) { return z.p_pu * z.p_pu + z.q_pu * z.q_pu; };

    double lo = 0.0, hi = 1.0;
    while (norm_sq(point_at(hi)) > eta_sq) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e18) break;  // q -> 0 and p -> 0, cannot happen for eta > 0
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (norm_sq(point_at(mid)) > eta_sq)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < tolerance * 1e-4 * (1.0 + hi)) break;
    }
    PvSetpoint z = point_at(hi);
    // Land exactly on the feasible set.
    return project_to_pv_set(spec, z.p_pu, z.q_pu);
}

void TclSpec::validate() const {
    rates.validate();
    if (!(t_min_f < t_max_f)) throw ConfigError("TCL comfort band is empty");
    if (!(cost_t > 0.0)) throw ConfigError("TCL cost weight must be positive");
    if (theta2_f_per_w == 0.0)
        throw ConfigError("TCL consumption must affect temperature (theta2 != 0)");
}

ConsumptionInterval tcl_hull(const TclSpec& spec) {
    spec.validate();
    const double drift = spec.drift_f();
    // Comfort band t_min <= drift + theta2 c <= t_max solved for c.
    const double b1 = (spec.t_min_f - drift) / spec.theta2_f_per_w;
    const double b2 = (spec.t_max_f - drift) / spec.theta2_f_per_w;
    const double comfort_lo = std::min(b1, b2);
    const double comfort_hi = std::max(b1, b2);
    const double lo = std::max(comfort_lo, spec.rates.min_rate());
    const double hi = std::min(comfort_hi, spec.rates.max_rate());
    if (lo > hi) {
        // Nearest rate by band violation.
        double nearest = spec.rates.min_rate();
        double best_violation = std::numeric_limits<double>::infinity();
        for (double rate : spec.rates.rates_w) {
            const double t = spec.temp_after(rate);
            const double violation = std::max({spec.t_min_f - t, t - spec.t_max_f, 0.0});
            if (violation < best_violation) {
                best_violation = violation;
                nearest = rate;
            }
        }
        throw HullInfeasibleError("comfort band [" + std::to_string(spec.t_min_f) + ", " +
                                      std::to_string(spec.t_max_f) +
                                      "] F unreachable at any feasible rate",
                                  nearest);
    }
    return ConsumptionInterval{lo, hi};
}

double tcl_relaxed_best_response(const TclSpec& spec, double alpha_per_w) {
    const ConsumptionInterval hull = tcl_hull(spec);
    // d/dc [cost_t (drift + theta2 c - t_nom)^2 + alpha c] = 0.
    const double theta2 = spec.theta2_f_per_w;
    const double stationary = (spec.t_nom_f - spec.drift_f()) / theta2 -
                              alpha_per_w / (2.0 * spec.cost_t * theta2 * theta2);
    return std::clamp(stationary, hull.lo_w, hull.hi_w);
}

double CustomerDecision::injection_p_pu(double power_base_kva) const {
    const double base_w = power_base_kva * 1000.0;
    double p = 0.0;
    for (const auto& z : fast) p += z.p_pu;
    for (const auto& s : slow) p -= s.realized_w / base_w;
    return p;
}

double CustomerDecision::injection_q_pu() const {
    double q = 0.0;
    for (const auto& z : fast) q += z.q_pu;
    return q;  // slow devices consume real power only
}

double CustomerDecision::relaxed_injection_p_pu(double power_base_kva) const {
    const double base_w = power_base_kva * 1000.0;
    double p = 0.0;
    for (const auto& z : fast) p += z.p_pu;
    for (const auto& s : slow) p -= s.relaxed_w / base_w;
    return p;
}

CustomerResponse customer_best_response(const CustomerSpec& spec, double alpha, double beta,
                                        double power_base_kva, double tolerance) {
    const double base_w = power_base_kva * 1000.0;
    CustomerResponse out;
    out.decision.fast.reserve(spec.pvs.size());
    out.decision.slow.reserve(spec.tcls.size());
    for (const PvSpec& pv : spec.pvs) {
        const PvSetpoint z = pv_best_response(pv, alpha, beta, tolerance);
        out.objective += pv.cost(z.p_pu, z.q_pu) - alpha * z.p_pu - beta * z.q_pu;
        out.decision.fast.push_back(z);
    }
    for (const TclSpec& tcl : spec.tcls) {
        SlowDecision d;
        try {
            d.relaxed_w = tcl_relaxed_best_response(tcl, alpha / base_w);
        } catch (const HullInfeasibleError& e) {
            d.relaxed_w = e.nearest_rate_w;
            d.pinned = true;
            out.hull_infeasible = true;
        }
        d.realized_w = d.relaxed_w;  // sampling happens at the slow frame boundary
        out.objective += tcl.cost(d.relaxed_w) + alpha * d.relaxed_w / base_w;
        out.decision.slow.push_back(d);
    }
    return out;
}

CustomerResponse fast_conditional_best_response(const CustomerSpec& spec, double alpha,
                                                double beta, const CustomerDecision& fixed,
                                                double power_base_kva, double tolerance) {
    if (fixed.slow.size() != spec.tcls.size())
        throw ShapeError("fixed decision does not match the customer's slow devices");
    const double base_w = power_base_kva * 1000.0;
    CustomerResponse out;
    out.decision.slow = fixed.slow;
    out.decision.fast.reserve(spec.pvs.size());
    for (const PvSpec& pv : spec.pvs) {
        const PvSetpoint z = pv_best_response(pv, alpha, beta, tolerance);
        out.objective += pv.cost(z.p_pu, z.q_pu) - alpha * z.p_pu - beta * z.q_pu;
        out.decision.fast.push_back(z);
    }
    for (std::size_t d = 0; d < spec.tcls.size(); ++d)
        out.objective +=
            spec.tcls[d].cost(fixed.slow[d].realized_w) + alpha * fixed.slow[d].realized_w / base_w;
    return out;
}

double customer_cost(const CustomerSpec& spec, const CustomerDecision& decision) {
    if (decision.fast.size() != spec.pvs.size() || decision.slow.size() != spec.tcls.size())
        throw ShapeError("decision does not match the customer's device inventory");
    double total = 0.0;
    for (std::size_t d = 0; d < spec.pvs.size(); ++d)
        total += spec.pvs[d].cost(decision.fast[d].p_pu, decision.fast[d].q_pu);
    for (std::size_t d = 0; d < spec.tcls.size(); ++d)
        total += spec.tcls[d].cost(decision.slow[d].realized_w);
    return total;
}

double customer_cost_relaxed(const CustomerSpec& spec, const CustomerDecision& decision) {
    if (decision.fast.size() != spec.pvs.size() || decision.slow.size() != spec.tcls.size())
        throw ShapeError("decision does not match the customer's device inventory");
    double total = 0.0;
    for (std::size_t d = 0; d < spec.pvs.size(); ++d)
        total += spec.pvs[d].cost(decision.fast[d].p_pu, decision.fast[d].q_pu);
    for (std::size_t d = 0; d < spec.tcls.size(); ++d)
        total += spec.tcls[d].cost(decision.slow[d].relaxed_w);
    return total;
}

}  // namespace vreg
