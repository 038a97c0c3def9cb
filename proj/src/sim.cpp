#include "vreg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "vreg/errors.hpp"
#include "vreg/rng.hpp"

namespace vreg {

void SystemInstance::validate() const {
    const TreeIndex index = validate_topology(topology);
    (void)index;
    const int n = topology.load_nodes();
    if (model.nodes() != n) throw ShapeError("grid model does not match the feeder");
    if (model.v_lower.size() != n || model.v_upper.size() != n)
        throw ShapeError("model limits must cover every load node");
    if (v_lower_orig.size() != n || v_upper_orig.size() != n)
        throw ShapeError("original limits must cover every load node");
    if (baseline_p.size() != n || baseline_q.size() != n)
        throw ShapeError("baseline injections must cover every load node");
    if (robust_margin < 0.0) throw ConfigError("robust margin must be nonnegative");
    std::vector<bool> taken(n + 1, false);
    for (const CustomerSpec& customer : customers) {
        if (customer.node < 1 || customer.node > n)
            throw ConfigError("customer node " + std::to_string(customer.node) +
                              " outside the feeder's load nodes");
        if (taken[customer.node])
            throw ConfigError("two customers share node " + std::to_string(customer.node));
        taken[customer.node] = true;
        for (const PvSpec& pv : customer.pvs) {
            if (!(pv.eta_pu > 0.0) || pv.p_av_pu < 0.0 || !(pv.cost_p > 0.0) ||
                !(pv.cost_q > 0.0))
                throw ConfigError("PV at node " + std::to_string(customer.node) +
                                  " has a nonpositive capacity or cost weight");
        }
        for (const TclSpec& tcl : customer.tcls) tcl.validate();
    }
}

std::vector<SlowDeviceSpan> SystemInstance::slow_spans() const {
    std::vector<SlowDeviceSpan> spans;
    for (const CustomerSpec& customer : customers)
        for (const TclSpec& tcl : customer.tcls)
            spans.push_back(SlowDeviceSpan{customer.node, tcl.rates.max_gap_w()});
    return spans;
}

void RunParams::validate() const {
    if (slow_ratio < 1) throw ConfigError("slow-to-fast ratio must be at least 1");
    if (iterations < slow_ratio)
        throw ConfigError("iteration budget must cover at least one slow frame");
    schedule.validate();
    if (threads < 1) throw ConfigError("thread count must be at least 1");
    if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
    if (!(dual_sentinel > 0.0)) throw ConfigError("divergence sentinel must be positive");
    if (convergence_window < 2) throw ConfigError("convergence window must be at least 2");
    if (!(convergence_rel > 0.0)) throw ConfigError("convergence threshold must be positive");
    if (stop_after_post_samples < 0)
        throw ConfigError("post-convergence sample target must be nonnegative");
}

void RunningStats::observe(const Eigen::VectorXd& v, double h) {
    if (count == 0) {
        mean_v = Eigen::VectorXd::Zero(v.size());
        m2_v = Eigen::VectorXd::Zero(v.size());
    } else if (v.size() != mean_v.size()) {
        throw ShapeError("voltage sample size changed mid-run");
    }
    ++count;
    const Eigen::VectorXd delta = v - mean_v;
    mean_v += delta / static_cast<double>(count);
    m2_v.array() += delta.array() * (v - mean_v).array();
    const double dh = h - mean_h;
    mean_h += dh / static_cast<double>(count);
    m2_h += dh * (h - mean_h);
}

Eigen::VectorXd RunningStats::variance_v() const {
    if (count < 2) return Eigen::VectorXd::Zero(mean_v.size());
    return m2_v / static_cast<double>(count - 1);
}

double RunningStats::variance_h() const {
    return count < 2 ? 0.0 : m2_h / static_cast<double>(count - 1);
}

Eigen::VectorXd RunningStats::ci_halfwidth_v() const {
    if (count < 2) return Eigen::VectorXd::Zero(mean_v.size());
    return 1.96 * (variance_v() / static_cast<double>(count)).cwiseSqrt();
}

RunningStats& update_running_stats(RunningStats& stats, const TraceRecord& record) {
    if (record.k <= stats.last_k)
        throw ConfigError("trace record " + std::to_string(record.k) +
                          " is not newer than the stats it updates");
    stats.observe(record.operational_voltage(), record.h_value);
    stats.last_k = record.k;
    return stats;
}

namespace {

/// Stepsize for the running loop: the diminishing rule is clamped to t >= 1
/// so the first slow frame uses epsilon = 1 instead of tripping the
/// strict-mode clock error.
double loop_stepsize(const StepsizeSchedule& schedule, long k, int ratio) {
    SimClock clock{k, ratio};
    if (schedule.mode == StepsizeMode::kDiminishing && clock.frame() < 1)
        clock.k = ratio;  // first frame borrows t = 1
    StepsizeSchedule sched = schedule;
    sched.slow_frame = ratio;
    return stepsize(sched, clock);
}

}  // namespace

RunResult run_two_timescale(const SystemInstance& instance, const RunParams& params,
                            const TraceSink& sink) {
    instance.validate();
    params.validate();
    const int n = instance.model.nodes();
    const double base_kva = instance.topology.power_base_kva;
    const std::size_t n_cust = instance.customers.size();

    RngPool rng(params.seed);
    for (const CustomerSpec& customer : instance.customers)
        for (std::size_t d = 0; d < customer.tcls.size(); ++d)
            rng.register_substream(customer.node, static_cast<int>(d));

    // mu-dependent constant of the dual function, fixed by the baselines.
    const Eigen::VectorXd base_v =
        instance.model.R * instance.baseline_p + instance.model.X * instance.baseline_q;
    const Eigen::VectorXd h_lower = instance.model.v_lower - instance.model.a - base_v;
    const Eigen::VectorXd h_upper = base_v + instance.model.a - instance.model.v_upper;

    DualState state = DualState::zeros(n);
    IncentiveSignal signals{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};

    std::vector<CustomerDecision> held(n_cust);     // device state between slow frames
    std::vector<CustomerResponse> responses(n_cust);  // fresh relaxed responses, h terms

    RunResult out;
    out.post_upper_violations = Eigen::VectorXi::Zero(n);
    out.post_lower_violations = Eigen::VectorXi::Zero(n);
    if (params.keep_trace) out.trace.reserve(static_cast<std::size_t>(params.iterations));

    Eigen::VectorXd prev_mean;
    bool have_prev_mean = false;

    auto process_customer = [&](std::size_t c, bool slow) {
        const CustomerSpec& customer = instance.customers[c];
        const int i = customer.node - 1;
        CustomerResponse resp =
            customer_best_response(customer, signals.alpha[i], signals.beta[i], base_kva,
                                   params.tolerance);
        if (slow) {
            for (std::size_t d = 0; d < customer.tcls.size(); ++d) {
                SlowDecision& decision = resp.decision.slow[d];
                if (decision.pinned) continue;  // held at the nearest feasible rate
                const Bracket bracket =
                    bracket_rates(decision.relaxed_w, customer.tcls[d].rates);
                auto& engine = rng.substream(customer.node, static_cast<int>(d));
                decision.realized_w =
                    two_point_sample(decision.relaxed_w, bracket, engine,
                                     RngPool::substream_key(customer.node, static_cast<int>(d)))
                        .realized_w;
            }
            held[c] = resp.decision;
        } else {
            held[c].fast = resp.decision.fast;  // slow decisions stay as sampled
        }
        responses[c] = std::move(resp);
    };

    long k = 0;
    for (; k < params.iterations; ++k) {
        const SimClock clock{k, params.slow_ratio};
        const bool slow = clock.at_slow_boundary();
        const double eps = loop_stepsize(params.schedule, k, params.slow_ratio);

        if (params.threads > 1 && n_cust > 1) {
            const std::size_t workers =
                std::min<std::size_t>(static_cast<std::size_t>(params.threads), n_cust);
            std::vector<std::thread> pool;
            pool.reserve(workers);
            std::exception_ptr failure;
            std::mutex failure_lock;
            for (std::size_t w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    try {
                        for (std::size_t c = w; c < n_cust; c += workers)
                            process_customer(c, slow);
                    } catch (...) {
                        std::scoped_lock guard(failure_lock);
                        if (!failure) failure = std::current_exception();
                    }
                });
            }
            for (auto& t : pool) t.join();
            if (failure) std::rethrow_exception(failure);
        } else {
            for (std::size_t c = 0; c < n_cust; ++c) process_customer(c, slow);
        }

        // Aggregate to per-node net injections (serial, so sums are
        // reproducible regardless of the fan-out).
        Eigen::VectorXd p = instance.baseline_p;
        Eigen::VectorXd q = instance.baseline_q;
        Eigen::VectorXd p_relaxed = instance.baseline_p;
        double h_terms = 0.0;
        double realized_cost = 0.0;
        bool hull_flag = false;
        for (std::size_t c = 0; c < n_cust; ++c) {
            const CustomerSpec& customer = instance.customers[c];
            const int i = customer.node - 1;
            p[i] += held[c].injection_p_pu(base_kva);
            q[i] += held[c].injection_q_pu();
            p_relaxed[i] += held[c].relaxed_injection_p_pu(base_kva);
            h_terms += responses[c].objective;
            realized_cost += customer_cost(customer, held[c]);
            hull_flag = hull_flag || responses[c].hull_infeasible;
        }
        out.hull_infeasible_any = out.hull_infeasible_any || hull_flag;

        TraceRecord record;
        record.k = k;
        record.slow_boundary = slow;
        record.p = std::move(p);
        record.q = std::move(q);
        record.relaxed_p = std::move(p_relaxed);
        record.v_hat = linear_voltage(instance.model, record.p, record.q);
        if (params.voltage_mode == VoltageMode::kNonlinearSweep)
            record.v_ac = ac_power_flow(instance.topology, record.p, record.q);
        record.mu_lower = state.mu_lower;
        record.mu_upper = state.mu_upper;
        record.alpha = signals.alpha;
        record.beta = signals.beta;
        record.eps = eps;
        record.h_value = h_terms + state.mu_lower.dot(h_lower) + state.mu_upper.dot(h_upper);
        record.hull_infeasible = hull_flag;

        const Eigen::VectorXd& v_op = record.operational_voltage();
        const Eigen::VectorXd residual = constraint_residual(instance.model, v_op);
        record.lagrangian = lagrangian_value(realized_cost, residual, state);

        update_running_stats(out.stats, record);
        record.running_mean_v = out.stats.mean_v;

        if (out.converged_at < 0) {
            if (out.stats.count % params.convergence_window == 0) {
                if (have_prev_mean) {
                    const double scale = std::max(prev_mean.cwiseAbs().maxCoeff(), 1e-12);
                    const double rel =
                        (out.stats.mean_v - prev_mean).cwiseAbs().maxCoeff() / scale;
                    if (rel < params.convergence_rel) out.converged_at = k;
                }
                prev_mean = out.stats.mean_v;
                have_prev_mean = true;
            }
        } else {
            update_running_stats(out.post_stats, record);
            for (int i = 0; i < n; ++i) {
                if (v_op[i] >= instance.v_upper_orig[i]) ++out.post_upper_violations[i];
                if (v_op[i] <= instance.v_lower_orig[i]) ++out.post_lower_violations[i];
            }
        }

        if (sink) sink(record);
        out.max_residual_norm = std::max(out.max_residual_norm, residual.norm());
        out.last_voltage = v_op;
        if (params.keep_trace) out.trace.push_back(std::move(record));

        state = dual_ascent_step(state, residual, eps);
        out.max_dual_entry = std::max(out.max_dual_entry, state.max_entry());
        if (state.max_entry() > params.dual_sentinel)
            throw DivergenceError("dual variable passed the sentinel " +
                                  std::to_string(params.dual_sentinel) + " at iteration " +
                                  std::to_string(k) +
                                  "; the instance is infeasible or the stepsize too large");
        signals = compute_signals(instance.model, state);
        out.max_signal_abs = std::max(out.max_signal_abs, signals.max_abs());

        if (params.stop_after_post_samples > 0 &&
            out.post_stats.count >= params.stop_after_post_samples) {
            ++k;
            break;
        }
    }

    out.iterations_run = k;
    out.final_state = std::move(state);
    out.final_signals = std::move(signals);
    return out;
}

Eigen::VectorXd uncontrolled_voltage(const SystemInstance& instance, VoltageMode mode,
                                     double tolerance) {
    instance.validate();
    const double base_kva = instance.topology.power_base_kva;
    Eigen::VectorXd p = instance.baseline_p;
    Eigen::VectorXd q = instance.baseline_q;
    for (const CustomerSpec& customer : instance.customers) {
        const CustomerResponse resp =
            customer_best_response(customer, 0.0, 0.0, base_kva, tolerance);
        p[customer.node - 1] += resp.decision.relaxed_injection_p_pu(base_kva);
        q[customer.node - 1] += resp.decision.injection_q_pu();
    }
    if (mode == VoltageMode::kNonlinearSweep)
        return ac_power_flow(instance.topology, p, q, tolerance);
    return linear_voltage(instance.model, p, q);
}

namespace {

/// Lipschitz constant of the dual gradient: 2 * lambda_max(R D_p R + X D_q X)
/// with D_p, D_q the per-node sums of device price sensitivities.
double dual_gradient_lipschitz(const SystemInstance& instance) {
    const int n = instance.model.nodes();
    const double base_w = instance.topology.power_base_kva * 1000.0;
    Eigen::VectorXd dp = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dq = Eigen::VectorXd::Zero(n);
    for (const CustomerSpec& customer : instance.customers) {
        const int i = customer.node - 1;
        for (const PvSpec& pv : customer.pvs) {
            dp[i] += 1.0 / (2.0 * pv.cost_p);
            dq[i] += 1.0 / (2.0 * pv.cost_q);
        }
        for (const TclSpec& tcl : customer.tcls) {
            const double theta2_pu = tcl.theta2_f_per_w * base_w;  // degrees F per pu
            dp[i] += 1.0 / (2.0 * tcl.cost_t * theta2_pu * theta2_pu);
        }
    }
    const Eigen::MatrixXd sens = instance.model.R * dp.asDiagonal() * instance.model.R +
                                 instance.model.X * dq.asDiagonal() * instance.model.X;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sens);
    return 2.0 * eig.eigenvalues().maxCoeff();
}

/// Golden-section minimizer of a convex function on [lo, hi], by value
/// comparisons only (no derivative or stationarity formula).
template <typename F>
double golden_section_min(double lo, double hi, F&& f) {
    constexpr double invphi = 0.6180339887498949;
    double a = lo, b = hi;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < 120 && b - a > 0.0; ++i) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// The customer's subproblem solved by generic numeric optimizers:
/// projected gradient for the inverters, golden section over the thermal
/// hulls. Shares no closed-form KKT or stationarity logic with
/// customer_best_response, so agreement between the two certifies the
/// production solvers at the oracle's prices.
CustomerDecision reference_customer_optimum(const CustomerSpec& customer, double alpha,
                                            double beta, double base_kva) {
    const double base_w = base_kva * 1000.0;
    CustomerDecision decision;
    for (const PvSpec& pv : customer.pvs) {
        const auto grad = [&pv](double p, double q) {
            return std::pair{-2.0 * pv.cost_p * (pv.p_av_pu - p), 2.0 * pv.cost_q * q};
        };
        decision.fast.push_back(pv_best_response_projected(pv, grad, alpha, beta, 1e-12, 100000));
    }
    for (const TclSpec& tcl : customer.tcls) {
        SlowDecision slow;
        try {
            const ConsumptionInterval hull = tcl_hull(tcl);
            slow.relaxed_w = golden_section_min(hull.lo_w, hull.hi_w, [&](double c) {
                return tcl.cost(c) + alpha * c / base_w;
            });
        } catch (const HullInfeasibleError& e) {
            slow.relaxed_w = e.nearest_rate_w;
            slow.pinned = true;
        }
        slow.realized_w = slow.relaxed_w;
        decision.slow.push_back(slow);
    }
    return decision;
}

}  // namespace

OracleSolution oracle_solve_p3(const SystemInstance& instance, double tolerance,
                               long max_iterations) {
    instance.validate();
    if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
    const int n = instance.model.nodes();
    const double base_kva = instance.topology.power_base_kva;

    const double lipschitz = dual_gradient_lipschitz(instance);
    if (!(lipschitz > 0.0))
        throw ConfigError("instance has no price-responsive capacity to coordinate");
    const double step = 1.0 / lipschitz;

    DualState state = DualState::zeros(n);
    std::vector<CustomerResponse> responses(instance.customers.size());

    auto evaluate = [&](const DualState& at, Eigen::VectorXd& residual_out) {
        const IncentiveSignal sig = compute_signals(instance.model, at);
        Eigen::VectorXd p = instance.baseline_p;
        Eigen::VectorXd q = instance.baseline_q;
        for (std::size_t c = 0; c < instance.customers.size(); ++c) {
            const CustomerSpec& customer = instance.customers[c];
            const int i = customer.node - 1;
            responses[c] = customer_best_response(customer, sig.alpha[i], sig.beta[i], base_kva,
                                                  tolerance);
            p[i] += responses[c].decision.relaxed_injection_p_pu(base_kva);
            q[i] += responses[c].decision.injection_q_pu();
        }
        residual_out = constraint_residual(instance.model, linear_voltage(instance.model, p, q));
    };

    Eigen::VectorXd residual;
    long it = 0;
    for (; it < max_iterations; ++it) {
        evaluate(state, residual);
        DualState next = dual_ascent_step(state, residual, step);
        const double dual_move =
            std::max((next.mu_lower - state.mu_lower).cwiseAbs().maxCoeff(),
                     (next.mu_upper - state.mu_upper).cwiseAbs().maxCoeff()) /
            step;
        const double violation = std::max(residual.maxCoeff(), 0.0);
        state = std::move(next);
        if (dual_move <= tolerance && violation <= tolerance) break;
    }
    if (it == max_iterations)
        throw DivergenceError(
            "relaxation solver did not reach tolerance " + std::to_string(tolerance) + " in " +
            std::to_string(max_iterations) +
            " iterations; the instance may be infeasible or badly conditioned");

    // Final primal bookkeeping: the reported optimum is recomputed with the
    // generic numeric solvers, so comparing it against production best
    // responses (exact_relaxation_check) is not a self-comparison.
    evaluate(state, residual);
    OracleSolution out;
    out.state = state;
    out.signals = compute_signals(instance.model, state);
    out.iterations = it + 1;
    Eigen::VectorXd p = instance.baseline_p;
    Eigen::VectorXd q = instance.baseline_q;
    double h_terms = 0.0;
    for (std::size_t c = 0; c < instance.customers.size(); ++c) {
        const CustomerSpec& customer = instance.customers[c];
        const int i = customer.node - 1;
        CustomerDecision star = reference_customer_optimum(customer, out.signals.alpha[i],
                                                           out.signals.beta[i], base_kva);
        p[i] += star.relaxed_injection_p_pu(base_kva);
        q[i] += star.injection_q_pu();
        out.primal_value += customer_cost_relaxed(customer, star);
        h_terms += responses[c].objective;
        out.decisions.push_back(std::move(star));
    }
    out.v_hat = linear_voltage(instance.model, p, q);
    const Eigen::VectorXd star_residual = constraint_residual(instance.model, out.v_hat);
    out.max_violation = std::max(star_residual.maxCoeff(), 0.0);
    const auto half = star_residual.size() / 2;
    out.complementarity =
        std::max(state.mu_lower.cwiseProduct(star_residual.head(half)).cwiseAbs().maxCoeff(),
                 state.mu_upper.cwiseProduct(star_residual.tail(half)).cwiseAbs().maxCoeff());
    const Eigen::VectorXd base_v =
        instance.model.R * instance.baseline_p + instance.model.X * instance.baseline_q;
    out.dual_value = h_terms +
                     state.mu_lower.dot(instance.model.v_lower - instance.model.a - base_v) +
                     state.mu_upper.dot(base_v + instance.model.a - instance.model.v_upper);
    return out;
}

double exact_relaxation_check(const SystemInstance& instance, const OracleSolution& oracle,
                              double tolerance) {
    instance.validate();
    if (oracle.decisions.size() != instance.customers.size())
        throw ShapeError("oracle solution does not match the customer population");
    const double base_kva = instance.topology.power_base_kva;
    const double base_w = base_kva * 1000.0;
    double deviation = 0.0;
    for (std::size_t c = 0; c < instance.customers.size(); ++c) {
        const CustomerSpec& customer = instance.customers[c];
        const int i = customer.node - 1;
        const CustomerResponse resp = customer_best_response(
            customer, oracle.signals.alpha[i], oracle.signals.beta[i], base_kva, tolerance);
        const CustomerDecision& star = oracle.decisions[c];
        for (std::size_t d = 0; d < customer.pvs.size(); ++d) {
            deviation = std::max(deviation,
                                 std::abs(resp.decision.fast[d].p_pu - star.fast[d].p_pu));
            deviation = std::max(deviation,
                                 std::abs(resp.decision.fast[d].q_pu - star.fast[d].q_pu));
        }
        for (std::size_t d = 0; d < customer.tcls.size(); ++d)
            deviation = std::max(deviation, std::abs(resp.decision.slow[d].relaxed_w -
                                                     star.slow[d].relaxed_w) /
                                                base_w);
    }
    return deviation;
}

std::vector<VarianceReportRow> scenario_variance_report(const std::vector<PresetRun>& presets,
                                                        long min_post_samples) {
    std::vector<VarianceReportRow> rows;
    rows.reserve(presets.size());
    for (const PresetRun& preset : presets) {
        const RunResult result = run_two_timescale(preset.instance, preset.params);
        if (result.post_stats.count < min_post_samples)
            throw DivergenceError("preset " + preset.name + " collected only " +
                                  std::to_string(result.post_stats.count) +
                                  " post-convergence samples of the required " +
                                  std::to_string(min_post_samples));
        VarianceReportRow row;
        row.preset = preset.name;
        row.post_samples = result.post_stats.count;
        row.converged_at = result.converged_at;
        row.mean_v = result.post_stats.mean_v;
        row.variance_v = result.post_stats.variance_v();
        const auto spans = preset.instance.slow_spans();
        row.bound = variance_upper_bound(preset.instance.model, spans,
                                         preset.instance.topology.power_base_kva);
        row.bound_per_device = variance_upper_bound_per_device(
            preset.instance.model, spans, preset.instance.topology.power_base_kva);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace vreg
