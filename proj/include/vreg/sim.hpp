#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vreg/devices.hpp"
#include "vreg/dual.hpp"
#include "vreg/feeder.hpp"
#include "vreg/recovery.hpp"

namespace vreg {

enum class VoltageMode { kLinear, kNonlinearSweep };

/// Everything a run needs, fully numeric: the feeder, the linear model the
/// controller works against (limits already tightened when a robust margin
/// is in force), the original limits for violation reporting, and the
/// customer population with its non-controllable baseline.
struct SystemInstance {
    FeederTopology topology;
    LinearGridModel model;        // limits the dual update enforces
    Eigen::VectorXd v_lower_orig; // reporting limits before tightening
    Eigen::VectorXd v_upper_orig;
    double robust_margin = 0.0;
    std::vector<CustomerSpec> customers;  // at most one per load node
    Eigen::VectorXd baseline_p;           // per-unit net baseline injections
    Eigen::VectorXd baseline_q;

    void validate() const;
    /// Worst-case bracket span (largest adjacent rate gap) of every slow
    /// device, the input to the variance bounds.
    std::vector<SlowDeviceSpan> slow_spans() const;
};

struct RunParams {
    long iterations = 20000;  // K
    int slow_ratio = 1;       // M
    StepsizeSchedule schedule;
    std::uint64_t seed = 1;
    VoltageMode voltage_mode = VoltageMode::kLinear;
    bool keep_trace = true;
    int threads = 1;  // customer fan-out; 1 = fully serial
    double tolerance = 1e-8;
    double dual_sentinel = 1e9;
    long convergence_window = 2000;   // trailing-window running-mean test
    double convergence_rel = 1e-4;
    long stop_after_post_samples = 0;  // 0 = always run all K iterations

    void validate() const;
};

/// One fast iteration of the closed loop. Dual state and signals are the
/// ones published to customers at this iteration (the step to the next
/// state happens after the record is cut).
struct TraceRecord {
    long k = 0;
    bool slow_boundary = false;
    Eigen::VectorXd p;          // realized net injections, per-unit
    Eigen::VectorXd q;
    Eigen::VectorXd relaxed_p;  // net injections with slow devices at held relaxed setpoints
    Eigen::VectorXd v_hat;      // linear-model voltage
    Eigen::VectorXd v_ac;       // sweep magnitudes; empty in linear mode
    Eigen::VectorXd mu_lower;
    Eigen::VectorXd mu_upper;
    Eigen::VectorXd alpha;
    Eigen::VectorXd beta;
    double eps = 0.0;
    double h_value = 0.0;     // dual function at this iteration's state
    double lagrangian = 0.0;  // Lagrangian at the realized decisions
    Eigen::VectorXd running_mean_v;
    bool hull_infeasible = false;

    /// The voltage the operator acted on (sweep when enabled, else linear).
    const Eigen::VectorXd& operational_voltage() const {
        return v_ac.size() > 0 ? v_ac : v_hat;
    }
};

/// Streaming per-iteration running mean/variance (Welford), for the
/// operational voltage per node and the dual-function value.
struct RunningStats {
    long count = 0;
    long last_k = -1;
    Eigen::VectorXd mean_v;
    Eigen::VectorXd m2_v;
    double mean_h = 0.0;
    double m2_h = 0.0;

    void observe(const Eigen::VectorXd& v, double h);
    Eigen::VectorXd variance_v() const;  // sample variance, zero until two samples
    double variance_h() const;
    Eigen::VectorXd ci_halfwidth_v() const;  // 1.96 * std / sqrt(count)
};

/// Folds one record into the stats; records must arrive in iteration order.
RunningStats& update_running_stats(RunningStats& stats, const TraceRecord& record);

using TraceSink = std::function<void(const TraceRecord&)>;

struct RunResult {
    std::vector<TraceRecord> trace;  // populated when params.keep_trace
    RunningStats stats;              // whole run
    RunningStats post_stats;         // after convergence detection
    long converged_at = -1;          // iteration the trailing-window test fired, -1 if never
    long iterations_run = 0;
    double max_signal_abs = 0.0;    // max |alpha|, |beta| seen (incentive boundedness diagnostic)
    double max_residual_norm = 0.0; // max ||g|| seen
    double max_dual_entry = 0.0;
    bool hull_infeasible_any = false;
    DualState final_state;
    IncentiveSignal final_signals;
    Eigen::VectorXd last_voltage;
    // Post-convergence counts of the operational voltage at or past the
    // ORIGINAL limits, the numerators of the robust-margin guarantee.
    Eigen::VectorXi post_upper_violations;
    Eigen::VectorXi post_lower_violations;
};

/// The two-timescale closed loop. Every iteration: customers best-respond
/// to the published signals (slow devices re-solve and sample realized
/// rates only at k = t*M), the operator evaluates voltage, steps the duals
/// against the model limits, and republishes signals. Deterministic given
/// the seed, including under threaded customer fan-out. The sink (when
/// set) receives every record as it is cut, so a divergence abort still
/// leaves the partial trace wherever the sink wrote it.
RunResult run_two_timescale(const SystemInstance& instance, const RunParams& params,
                            const TraceSink& sink = nullptr);

/// Baseline plus every customer's zero-price best response (PVs at full
/// available output, thermal loads tracking comfort), i.e. the voltage with
/// no coordination.
Eigen::VectorXd uncontrolled_voltage(const SystemInstance& instance, VoltageMode mode,
                                     double tolerance = 1e-8);

/// High-precision reference solution of the continuous relaxation.
struct OracleSolution {
    std::vector<CustomerDecision> decisions;  // relaxed optimum, one per customer
    Eigen::VectorXd v_hat;
    DualState state;
    IncentiveSignal signals;
    double primal_value = 0.0;  // total device cost at the optimum
    double dual_value = 0.0;    // h at the final duals
    double max_violation = 0.0;       // residual limit violation
    double complementarity = 0.0;     // max |mu * g|
    long iterations = 0;
};

/// Deterministic projected dual ascent with the fixed step 1/L, where L is
/// twice the largest eigenvalue of R D_p R + X D_q X built from the device
/// price sensitivities (the Lipschitz constant of the dual gradient).
/// Converged when the projected dual step and the limit violations both
/// drop below `tolerance`; throws DivergenceError at the iteration cap.
OracleSolution oracle_solve_p3(const SystemInstance& instance, double tolerance = 1e-9,
                               long max_iterations = 2000000);

/// Max per-unit deviation between every customer's best response to the
/// oracle's signals and the oracle's own optimum; near zero when the
/// relaxation is exact.
double exact_relaxation_check(const SystemInstance& instance, const OracleSolution& oracle,
                              double tolerance = 1e-8);

struct PresetRun {
    std::string name;
    SystemInstance instance;
    RunParams params;
};

struct VarianceReportRow {
    std::string preset;
    long post_samples = 0;
    long converged_at = -1;
    Eigen::VectorXd mean_v;      // post-convergence running mean
    Eigen::VectorXd variance_v;  // post-convergence empirical variance
    Eigen::VectorXd bound;       // worst-case-span variance bound
    Eigen::VectorXd bound_per_device;
};

/// Runs each preset past convergence and reports empirical per-node voltage
/// variance next to the analytic bounds. Throws when a run cannot collect
/// min_post_samples post-convergence records.
std::vector<VarianceReportRow> scenario_variance_report(const std::vector<PresetRun>& presets,
                                                        long min_post_samples = 10000);

}  // namespace vreg
