#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "vreg/recovery.hpp"

namespace vreg {

/// PV inverter: injection (p, q) with 0 <= p <= p_av and p^2 + q^2 <=
/// eta^2, cost cost_p * (p_av - p)^2 + cost_q * q^2. All powers per-unit.
struct PvSpec {
    double p_av_pu = 0.0;
    double eta_pu = 0.0;
    double cost_p = 1.0;
    double cost_q = 1.0;

    double cost(double p_pu, double q_pu) const {
        const double dp = p_av_pu - p_pu;
        return cost_p * dp * dp + cost_q * q_pu * q_pu;
    }
    bool feasible(double p_pu, double q_pu, double tolerance) const;
};

struct PvSetpoint {
    double p_pu = 0.0;
    double q_pu = 0.0;
};

/// Unique minimizer of cost(p, q) - alpha*p - beta*q over the PV feasible
/// set. KKT case split (interior / box / capacity circle); the circle case
/// bisects the multiplier.
PvSetpoint pv_best_response(const PvSpec& spec, double alpha, double beta,
                            double tolerance = 1e-8);

/// Same minimization for an arbitrary differentiable convex cost, by
/// projected gradient. Shipped quadratics never need it; it backs custom
/// cost experiments and cross-checks the analytic path.
template <typename CostGrad>
PvSetpoint pv_best_response_projected(const PvSpec& spec, CostGrad&& cost_grad, double alpha,
                                      double beta, double tolerance = 1e-8,
                                      int max_iterations = 10000);

/// Exact Euclidean projection onto the PV feasible set.
PvSetpoint project_to_pv_set(const PvSpec& spec, double p_pu, double q_pu);

/// Thermostatic load over one control interval: the temperature reached is
/// t_in + theta1 (t_out - t_in) + theta2 * c for consumption c in watts,
/// kept inside [t_min, t_max]; cost cost_t * (temp - t_nom)^2.
struct TclSpec {
    double t_in_f = 75.0;
    double t_out_f = 90.0;
    double theta1 = 0.1;
    double theta2_f_per_w = -0.001;
    double t_min_f = 70.0;
    double t_max_f = 80.0;
    double t_nom_f = 75.0;
    double cost_t = 20.0;
    RateGrid rates;

    /// Temperature drift with zero consumption.
    double drift_f() const { return t_in_f + theta1 * (t_out_f - t_in_f); }
    double temp_after(double c_w) const { return drift_f() + theta2_f_per_w * c_w; }
    double cost(double c_w) const {
        const double dt = temp_after(c_w) - t_nom_f;
        return cost_t * dt * dt;
    }
    void validate() const;
};

struct ConsumptionInterval {
    double lo_w = 0.0;
    double hi_w = 0.0;
};

/// Convex hull of the feasible consumption set: grid span intersected with
/// the comfort band. Throws HullInfeasibleError when the intersection is
/// empty, carrying the closest feasible rate.
ConsumptionInterval tcl_hull(const TclSpec& spec);

/// Minimizer of cost(c) + alpha_w * c over the hull (consumption pays the
/// real-power price because it is a negative injection). Closed-form
/// stationary point clipped to the interval.
double tcl_relaxed_best_response(const TclSpec& spec, double alpha_per_w);

/// A customer: the devices at one load node plus its non-controllable
/// baseline. Baselines are mirrored from the instance-level profile
/// vectors, which stay authoritative.
struct CustomerSpec {
    int node = 0;  // 1-based load node
    std::vector<PvSpec> pvs;
    std::vector<TclSpec> tcls;
    double baseline_p_pu = 0.0;
    double baseline_q_pu = 0.0;

    bool participating() const { return !pvs.empty() || !tcls.empty(); }
};

struct SlowDecision {
    double relaxed_w = 0.0;   // within the hull
    double realized_w = 0.0;  // a grid rate
    bool pinned = false;      // hull was infeasible, device held at nearest rate
};

struct CustomerDecision {
    std::vector<PvSetpoint> fast;
    std::vector<SlowDecision> slow;

    /// Net controllable injection at the customer's node, realized rates.
    double injection_p_pu(double power_base_kva) const;
    double injection_q_pu() const;
    /// Same with the relaxed slow setpoints instead of realized ones.
    double relaxed_injection_p_pu(double power_base_kva) const;
};

struct CustomerResponse {
    CustomerDecision decision;
    /// min C_i(z_i) - alpha p_i - beta q_i, the customer's term of the dual
    /// function, evaluated at the relaxed decision.
    double objective = 0.0;
    bool hull_infeasible = false;
};

/// Joint best response of every device under published prices (slow
/// devices over their hulls). Prices are per per-unit power; the base
/// converts them to per-watt for the thermal devices.
CustomerResponse customer_best_response(const CustomerSpec& spec, double alpha, double beta,
                                        double power_base_kva, double tolerance = 1e-8);

/// Fast-device re-solve with slow decisions held fixed. With separable
/// costs this is the per-PV best response; the slow entries of `fixed` are
/// copied through.
CustomerResponse fast_conditional_best_response(const CustomerSpec& spec, double alpha,
                                                double beta, const CustomerDecision& fixed,
                                                double power_base_kva, double tolerance = 1e-8);

/// Total device cost at the realized decision.
double customer_cost(const CustomerSpec& spec, const CustomerDecision& decision);
/// Total device cost with slow devices at their relaxed setpoints.
double customer_cost_relaxed(const CustomerSpec& spec, const CustomerDecision& decision);

// --- implementation of the template ---

template <typename CostGrad>
PvSetpoint pv_best_response_projected(const PvSpec& spec, CostGrad&& cost_grad, double alpha,
                                      double beta, double tolerance, int max_iterations) {
    PvSetpoint z{spec.p_av_pu, 0.0};
    double step = 0.5 / std::max({spec.cost_p, spec.cost_q, 1.0});
    for (int it = 0; it < max_iterations; ++it) {
        auto [gp, gq] = cost_grad(z.p_pu, z.q_pu);
        const PvSetpoint next =
            project_to_pv_set(spec, z.p_pu - step * (gp - alpha), z.q_pu - step * (gq - beta));
        const double move = std::abs(next.p_pu - z.p_pu) + std::abs(next.q_pu - z.q_pu);
        z = next;
        if (move < tolerance * step) break;
    }
    return z;
}

}  // namespace vreg
