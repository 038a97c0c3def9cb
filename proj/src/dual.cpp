#include "vreg/dual.hpp"

#include "vreg/errors.hpp"

namespace vreg {

void DualState::validate() const {
    if (mu_lower.size() != mu_upper.size())
        throw ShapeError("dual vectors must have matching lengths");
    if (mu_lower.size() > 0 && (mu_lower.minCoeff() < 0.0 || mu_upper.minCoeff() < 0.0))
        throw ConfigError("dual variables must be nonnegative");
}

void StepsizeSchedule::validate() const {
    if (!(value > 0.0)) throw ConfigError("stepsize must be positive");
    if (slow_frame < 1) throw ConfigError("slow frame length must be at least 1");
}

void SimClock::validate() const {
    if (ratio < 1) throw ConfigError("slow-to-fast ratio must be at least 1");
    if (k < 0) throw ConfigError("iteration counter must be nonnegative");
}

DualState dual_ascent_step(const DualState& state, const Eigen::VectorXd& residual, double eps) {
    state.validate();
    if (!(eps > 0.0)) throw ConfigError("dual stepsize must be positive");
    const auto n = state.mu_lower.size();
    if (residual.size() != 2 * n)
        throw ShapeError("residual must stack lower and upper components");
    DualState next;
    next.mu_lower = (state.mu_lower + eps * residual.head(n)).cwiseMax(0.0);
    next.mu_upper = (state.mu_upper + eps * residual.tail(n)).cwiseMax(0.0);
    return next;
}

IncentiveSignal compute_signals(const LinearGridModel& model, const DualState& state) {
    state.validate();
    if (state.mu_lower.size() != model.R.rows())
        throw ShapeError("dual state length does not match the grid model");
    const Eigen::VectorXd net = state.mu_lower - state.mu_upper;
    return IncentiveSignal{model.R * net, model.X * net};
}

double stepsize(const StepsizeSchedule& schedule, const SimClock& clock) {
    schedule.validate();
    clock.validate();
    if (schedule.mode == StepsizeMode::kConstant) return schedule.value;
    const long t = clock.k / schedule.slow_frame;
    if (t < 1)
        throw ClockError("diminishing stepsize undefined before the first full slow frame");
    return 1.0 / static_cast<double>(t);
}

double lagrangian_value(double total_cost, const Eigen::VectorXd& residual,
                        const DualState& state) {
    const auto n = state.mu_lower.size();
    if (residual.size() != 2 * n)
        throw ShapeError("residual must stack lower and upper components");
    return total_cost + state.mu_lower.dot(residual.head(n)) +
           state.mu_upper.dot(residual.tail(n));
}

double dual_function_value(const std::vector<CustomerSpec>& customers,
                           const LinearGridModel& model, const Eigen::VectorXd& baseline_p,
                           const Eigen::VectorXd& baseline_q, const DualState& state,
                           double power_base_kva, double tolerance) {
    if (baseline_p.size() != model.nodes() || baseline_q.size() != model.nodes())
        throw ShapeError("baseline injections must cover every load node");
    const IncentiveSignal sig = compute_signals(model, state);
    double value = state.mu_lower.dot(model.v_lower - model.a - model.R * baseline_p -
                                      model.X * baseline_q) +
                   state.mu_upper.dot(model.R * baseline_p + model.X * baseline_q + model.a -
                                      model.v_upper);
    for (const CustomerSpec& customer : customers) {
        if (customer.node < 1 || customer.node > model.nodes())
            throw ShapeError("customer node outside the feeder");
        const int i = customer.node - 1;
        value += customer_best_response(customer, sig.alpha[i], sig.beta[i], power_base_kva,
                                        tolerance)
                     .objective;
    }
    return value;
}

}  // namespace vreg
