#pragma once

#include <Eigen/Dense>

#include "vreg/devices.hpp"
#include "vreg/feeder.hpp"

namespace vreg {

/// Dual prices on the lower/upper voltage limits, one pair per load node.
/// Projection in dual_ascent_step keeps every entry nonnegative.
struct DualState {
    Eigen::VectorXd mu_lower;
    Eigen::VectorXd mu_upper;

    static DualState zeros(int nodes) {
        return DualState{Eigen::VectorXd::Zero(nodes), Eigen::VectorXd::Zero(nodes)};
    }
    int nodes() const { return static_cast<int>(mu_lower.size()); }
    double max_entry() const {
        if (mu_lower.size() == 0) return 0.0;
        return std::max(mu_lower.maxCoeff(), mu_upper.maxCoeff());
    }
    void validate() const;
};

/// Per-node prices published to customers: alpha for real power, beta for
/// reactive, both currency per per-unit power.
struct IncentiveSignal {
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta;

    double max_abs() const {
        if (alpha.size() == 0) return 0.0;
        return std::max(alpha.cwiseAbs().maxCoeff(), beta.cwiseAbs().maxCoeff());
    }
};

enum class StepsizeMode { kConstant, kDiminishing };

/// Constant epsilon, or the diminishing rule epsilon = 1/t at iteration
/// k = t * slow_frame + m (square summable in t, not summable).
struct StepsizeSchedule {
    StepsizeMode mode = StepsizeMode::kConstant;
    double value = 0.1;  // constant-mode epsilon
    int slow_frame = 1;  // M, frame length of the diminishing rule

    void validate() const;
};

/// Fast iteration counter k against the slow-to-fast ratio M, with
/// k = t*M + m, 0 <= m < M.
struct SimClock {
    long k = 0;
    int ratio = 1;  // M

    long frame() const { return k / ratio; }                    // t
    int offset() const { return static_cast<int>(k % ratio); }  // m
    bool at_slow_boundary() const { return offset() == 0; }
    void advance() { ++k; }
    void validate() const;
};

/// One projected subgradient step: mu_lower <- [mu_lower + eps*(v_lo - v)]+
/// and mu_upper <- [mu_upper + eps*(v - v_hi)]+, with the residual stacked
/// [lower; upper] as produced by constraint_residual.
DualState dual_ascent_step(const DualState& state, const Eigen::VectorXd& residual, double eps);

/// alpha = R (mu_lower - mu_upper), beta = X (mu_lower - mu_upper).
IncentiveSignal compute_signals(const LinearGridModel& model, const DualState& state);

/// Stepsize at the clock's iteration. Constant mode ignores the clock;
/// diminishing mode returns 1/t and throws ClockError during frame t = 0.
double stepsize(const StepsizeSchedule& schedule, const SimClock& clock);

/// L(z, mu) = total_cost + mu' g(z) for a residual stacked [lower; upper].
double lagrangian_value(double total_cost, const Eigen::VectorXd& residual,
                        const DualState& state);

/// h(mu) = min_z L(z, mu), evaluated by decomposition: each customer's best
/// response under the signals of `state`, plus the mu-dependent constant
/// assembled from the baseline injections:
///   mu_lower'(v_lo - a - R p0 - X q0) + mu_upper'(R p0 + X q0 + a - v_hi).
double dual_function_value(const std::vector<CustomerSpec>& customers,
                           const LinearGridModel& model, const Eigen::VectorXd& baseline_p,
                           const Eigen::VectorXd& baseline_q, const DualState& state,
                           double power_base_kva, double tolerance = 1e-8);

}  // namespace vreg
