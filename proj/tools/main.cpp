// voltreg: feeder-level voltage regulation via randomized device incentives.
//
// Subcommands:
//   run              simulate a preset or scenario file, write reports
//   model            export the linearized feeder sensitivities
//   variance-report  post-convergence voltage spread across presets
//   dump-preset      write a preset's input files for editing/rerunning

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vreg/errors.hpp"
#include "vreg/reports.hpp"
#include "vreg/scenario.hpp"
#include "vreg/sim.hpp"

namespace {

struct CliOverrides {
    std::optional<long> iterations;
    std::optional<int> slow_ratio;
    std::optional<std::string> stepsize_mode;
    std::optional<double> stepsize;
    std::optional<double> v_lower;
    std::optional<double> v_upper;
    std::optional<double> robust_margin;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> voltage_mode;
    std::optional<long> timestep;
    std::optional<long> post_samples;
    std::optional<bool> stop_when_sampled;
    std::optional<int> threads;

    vreg::ScenarioOverrides to_overrides() const {
        vreg::ScenarioOverrides o;
        o.iterations = iterations;
        o.slow_ratio = slow_ratio;
        o.stepsize_mode = stepsize_mode;
        o.stepsize = stepsize;
        o.v_lower = v_lower;
        o.v_upper = v_upper;
        o.robust_margin = robust_margin;
        o.seed = seed;
        o.voltage_mode = voltage_mode;
        o.timestep = timestep;
        o.post_samples = post_samples;
        o.stop_when_sampled = stop_when_sampled;
        o.threads = threads;
        return o;
    }
};

void add_override_options(CLI::App& cmd, CliOverrides& o) {
    cmd.add_option("--iterations", o.iterations, "Total fast iterations");
    cmd.add_option("--slow-ratio", o.slow_ratio, "Fast iterations per slow frame");
    cmd.add_option("--stepsize-mode", o.stepsize_mode, "constant | diminishing")
        ->check(CLI::IsMember({"constant", "diminishing"}));
    cmd.add_option("--stepsize", o.stepsize, "Dual step size (constant mode)");
    cmd.add_option("--v-lower", o.v_lower, "Lower voltage limit, per-unit");
    cmd.add_option("--v-upper", o.v_upper, "Upper voltage limit, per-unit");
    cmd.add_option("--robust-margin", o.robust_margin, "Symmetric limit tightening, per-unit");
    cmd.add_option("--seed", o.seed, "Master random seed");
    cmd.add_option("--voltage-mode", o.voltage_mode, "linear | ac")
        ->check(CLI::IsMember({"linear", "ac"}));
    cmd.add_option("--timestep", o.timestep, "Profile row to run at (-1 = availability peak)");
    cmd.add_option("--post-samples", o.post_samples, "Post-convergence sample target");
    cmd.add_flag("--stop-when-sampled,!--no-stop-when-sampled", o.stop_when_sampled,
                 "End the run once the sample target is collected");
    cmd.add_option("--threads", o.threads, "Customer-response worker threads");
}

void apply_overrides(vreg::ScenarioConfig& config, const CliOverrides& o) {
    const vreg::ScenarioOverrides ov = o.to_overrides();
    if (ov.iterations) config.iterations = *ov.iterations;
    if (ov.slow_ratio) config.slow_ratio = *ov.slow_ratio;
    if (ov.stepsize_mode)
        config.schedule.mode = *ov.stepsize_mode == "constant"
                                   ? vreg::StepsizeMode::kConstant
                                   : vreg::StepsizeMode::kDiminishing;
    if (ov.stepsize) config.schedule.value = *ov.stepsize;
    if (ov.v_lower) config.v_lower = *ov.v_lower;
    if (ov.v_upper) config.v_upper = *ov.v_upper;
    if (ov.robust_margin) config.robust_margin = *ov.robust_margin;
    if (ov.seed) config.seed = *ov.seed;
    if (ov.voltage_mode)
        config.voltage_mode = *ov.voltage_mode == "linear" ? vreg::VoltageMode::kLinear
                                                           : vreg::VoltageMode::kNonlinearSweep;
    if (ov.timestep) config.timestep = *ov.timestep;
    if (ov.post_samples) config.post_samples = *ov.post_samples;
    if (ov.stop_when_sampled) config.stop_when_sampled = *ov.stop_when_sampled;
    if (ov.threads) config.threads = *ov.threads;
    config.validate();
}

int cmd_run(const std::string& scenario_arg, const std::string& manifest_arg,
            const CliOverrides& overrides, const std::filesystem::path& out_dir, bool no_trace,
            bool no_oracle, bool plot, long trace_stride) {
    vreg::ScenarioConfig config;
    if (!manifest_arg.empty()) {
        vreg::RunManifest manifest = vreg::load_manifest(manifest_arg);
        vreg::verify_manifest(manifest);
        config = manifest.config;
        apply_overrides(config, overrides);
    } else {
        config = vreg::load_scenario(scenario_arg, overrides.to_overrides());
    }

    vreg::ResolvedScenario resolved = vreg::resolve_instance(config);
    const vreg::SystemInstance& instance = resolved.instance;
    for (const std::string& warning : resolved.warnings)
        std::cerr << "warning: " << warning << "\n";

    std::filesystem::create_directories(out_dir);
    vreg::save_manifest(vreg::make_manifest(config), out_dir / "manifest.json");

    // Relaxed-optimum certificate; failure is reported, not fatal.
    std::optional<vreg::OracleSolution> oracle;
    std::string oracle_error;
    std::optional<double> relaxation_deviation;
    if (!no_oracle) {
        try {
            oracle = vreg::oracle_solve_p3(instance, 1e-7, 500000);
            relaxation_deviation = vreg::exact_relaxation_check(instance, *oracle, 1e-9);
        } catch (const std::exception& e) {
            oracle_error = e.what();
            std::cerr << "warning: relaxed-optimum solve failed: " << e.what() << "\n";
        }
    }

    const long stride =
        trace_stride > 0 ? trace_stride : vreg::TraceCsvWriter::auto_stride(config.iterations);
    std::optional<vreg::TraceCsvWriter> trace_writer;
    if (!no_trace) trace_writer.emplace(out_dir / "trace.csv", stride);
    vreg::VoltageTrajectoryWriter trajectory_writer(
        out_dir / "voltage_trajectory.csv", stride,
        oracle ? std::optional<Eigen::VectorXd>(oracle->v_hat) : std::nullopt);

    // Strided per-node voltages retained for the optional charts.
    std::vector<double> plot_k;
    std::vector<Eigen::VectorXd> plot_v, plot_mean;
    const auto sink = [&](const vreg::TraceRecord& record) {
        if (trace_writer) (*trace_writer)(record);
        trajectory_writer(record);
        if (plot && record.k % stride == 0) {
            plot_k.push_back(static_cast<double>(record.k));
            plot_v.push_back(record.operational_voltage());
            plot_mean.push_back(record.running_mean_v);
        }
    };

    vreg::RunParams params = vreg::run_params(config, /*keep_trace=*/false);
    vreg::RunResult result;
    try {
        result = vreg::run_two_timescale(instance, params, sink);
    } catch (...) {
        // Keep whatever portion of the trace was written before the failure.
        if (trace_writer) trace_writer->close();
        trajectory_writer.close();
        throw;
    }
    if (trace_writer) trace_writer->close();
    trajectory_writer.close();

    const Eigen::VectorXd v_uncontrolled =
        vreg::uncontrolled_voltage(instance, config.voltage_mode, params.tolerance);
    vreg::write_band_csv(instance, v_uncontrolled, result, out_dir / "voltage_band.csv");

    vreg::RunSummary summary;
    summary.scenario = config.preset == "custom" ? scenario_arg : config.preset;
    summary.timestep = resolved.timestep;
    summary.params = params;
    summary.result = &result;
    summary.instance = &instance;
    summary.v_uncontrolled = v_uncontrolled;
    summary.oracle = oracle ? &*oracle : nullptr;
    summary.oracle_error = oracle_error;
    summary.relaxation_deviation = relaxation_deviation;
    summary.warnings = resolved.warnings;
    vreg::write_summary(summary, out_dir / "summary.json");

    if (plot && !plot_k.empty()) {
        // Trajectory of the node with the highest uncontrolled voltage.
        int peak_node = 0;
        v_uncontrolled.maxCoeff(&peak_node);
        vreg::SvgSeries v_series{"voltage node " + std::to_string(peak_node + 1), "#1f77b4",
                                 plot_k, {}};
        vreg::SvgSeries mean_series{"running mean", "#d62728", plot_k, {}};
        vreg::SvgSeries limit_series{"upper limit", "#7f7f7f", plot_k, {}};
        for (std::size_t i = 0; i < plot_k.size(); ++i) {
            v_series.y.push_back(plot_v[i](peak_node));
            mean_series.y.push_back(plot_mean[i](peak_node));
            limit_series.y.push_back(instance.v_upper_orig(peak_node));
        }
        vreg::write_svg_chart({v_series, mean_series, limit_series},
                              "Voltage under randomized control", "iteration", "voltage (pu)",
                              out_dir / "voltage_trajectory.svg");

        const vreg::RunningStats& stats =
            result.post_stats.count > 0 ? result.post_stats : result.stats;
        std::vector<double> nodes;
        vreg::SvgSeries unc{"uncontrolled", "#1f77b4", {}, {}};
        vreg::SvgSeries ctl{"controlled mean", "#2ca02c", {}, {}};
        vreg::SvgSeries lim{"upper limit", "#7f7f7f", {}, {}};
        for (int i = 0; i < v_uncontrolled.size(); ++i) {
            nodes.push_back(static_cast<double>(i + 1));
            unc.y.push_back(v_uncontrolled(i));
            ctl.y.push_back(stats.mean_v(i));
            lim.y.push_back(instance.v_upper_orig(i));
        }
        unc.x = ctl.x = lim.x = nodes;
        vreg::write_svg_chart({unc, ctl, lim}, "Voltage profile across the feeder", "node",
                              "voltage (pu)", out_dir / "voltage_band.svg");
    }

    std::printf("scenario          %s (timestep %ld)\n", summary.scenario.c_str(),
                resolved.timestep);
    std::printf("iterations        %ld (converged at %ld)\n", result.iterations_run,
                result.converged_at);
    std::printf("final voltage     [%.5f, %.5f] pu\n", result.last_voltage.minCoeff(),
                result.last_voltage.maxCoeff());
    if (result.post_stats.count > 1)
        std::printf("post mean         [%.5f, %.5f] pu over %ld samples\n",
                    result.post_stats.mean_v.minCoeff(), result.post_stats.mean_v.maxCoeff(),
                    result.post_stats.count);
    if (oracle)
        std::printf("relaxed optimum   primal %.6g, dual %.6g, violation %.3g\n",
                    oracle->primal_value, oracle->dual_value, oracle->max_violation);
    if (result.hull_infeasible_any)
        std::printf("note: some thermal loads were pinned to their nearest feasible rate\n");
    std::printf("reports           %s\n", out_dir.string().c_str());
    return 0;
}

int cmd_model(const std::string& scenario_arg, const CliOverrides& overrides,
              const std::filesystem::path& out_dir) {
    const vreg::ScenarioConfig config = vreg::load_scenario(scenario_arg, overrides.to_overrides());
    const vreg::ResolvedScenario resolved = vreg::resolve_instance(config);
    std::filesystem::create_directories(out_dir);
    vreg::export_linear_model_csv(resolved.instance.model, out_dir);
    vreg::save_feeder(resolved.instance.topology, out_dir / "feeder.json");
    const Eigen::VectorXd v_lin =
        vreg::uncontrolled_voltage(resolved.instance, vreg::VoltageMode::kLinear, 1e-8);
    const Eigen::VectorXd v_ac =
        vreg::uncontrolled_voltage(resolved.instance, vreg::VoltageMode::kNonlinearSweep, 1e-8);
    std::printf("nodes                 %d\n", resolved.instance.topology.load_nodes());
    std::printf("uncontrolled linear   [%.5f, %.5f] pu\n", v_lin.minCoeff(), v_lin.maxCoeff());
    std::printf("uncontrolled ac       [%.5f, %.5f] pu\n", v_ac.minCoeff(), v_ac.maxCoeff());
    std::printf("model deviation       %.3g pu (max abs, linear vs ac)\n",
                (v_lin - v_ac).cwiseAbs().maxCoeff());
    std::printf("exports               %s\n", out_dir.string().c_str());
    return 0;
}

int cmd_variance_report(const std::vector<std::string>& names, const CliOverrides& overrides,
                        const std::filesystem::path& out_dir, long min_post_samples) {
    std::vector<vreg::PresetRun> runs;
    for (const std::string& name : names) {
        vreg::ScenarioConfig config = vreg::load_scenario(name, overrides.to_overrides());
        config.stop_when_sampled = true;  // stop once the sample target is reached
        vreg::PresetRun run;
        run.name = name;
        run.instance = vreg::resolve_instance(config).instance;
        run.params = vreg::run_params(config, /*keep_trace=*/false);
        runs.push_back(std::move(run));
    }
    const std::vector<vreg::VarianceReportRow> rows =
        vreg::scenario_variance_report(runs, min_post_samples);
    std::filesystem::create_directories(out_dir);
    vreg::write_variance_csv(rows, out_dir / "voltage_variance.csv");
    for (const vreg::VarianceReportRow& row : rows)
        std::printf("%-12s samples %-7ld variance [%.3g, %.3g], bound max %.3g\n",
                    row.preset.c_str(), row.post_samples, row.variance_v.minCoeff(),
                    row.variance_v.maxCoeff(), row.bound.maxCoeff());
    std::printf("report  %s\n", (out_dir / "voltage_variance.csv").string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Distributed voltage regulation with randomized device incentives"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(vreg::kToolVersion));

    // -- run ----------------------------------------------------------
    auto* run = app.add_subcommand("run", "Simulate a scenario and write reports");
    std::string run_scenario, run_manifest;
    auto* scenario_opt =
        run->add_option("-s,--scenario", run_scenario, "Preset name or scenario JSON file");
    run->add_option("-m,--manifest", run_manifest, "Rerun a recorded manifest")
        ->excludes(scenario_opt);
    std::string run_out = "out";
    run->add_option("-o,--out", run_out, "Report directory")->capture_default_str();
    bool no_trace = false, no_oracle = false, plot = false;
    long trace_stride = 0;
    run->add_flag("--no-trace", no_trace, "Skip the full trace CSV");
    run->add_flag("--no-oracle", no_oracle, "Skip the relaxed-optimum solve");
    run->add_flag("--plot", plot, "Also write SVG charts");
    run->add_option("--trace-stride", trace_stride,
                    "Write every Nth iteration (0 = pick from the iteration count)");
    CliOverrides run_overrides;
    add_override_options(*run, run_overrides);

    // -- model --------------------------------------------------------
    auto* model = app.add_subcommand("model", "Export the linearized feeder model");
    std::string model_scenario = "ieee37-s2";
    model->add_option("-s,--scenario", model_scenario, "Preset name or scenario JSON file")
        ->capture_default_str();
    std::string model_out = "out";
    model->add_option("-o,--out", model_out, "Export directory")->capture_default_str();
    CliOverrides model_overrides;
    add_override_options(*model, model_overrides);

    // -- variance-report ------------------------------------------------
    auto* var = app.add_subcommand(
        "variance-report", "Post-convergence voltage variance across device granularities");
    std::vector<std::string> var_names = {"ieee37-s1", "ieee37-s2", "ieee37-s3"};
    var->add_option("-s,--scenarios", var_names, "Presets or scenario files to compare")
        ->capture_default_str();
    std::string var_out = "out";
    var->add_option("-o,--out", var_out, "Report directory")->capture_default_str();
    long min_post_samples = 10000;
    var->add_option("--min-post-samples", min_post_samples,
                    "Required post-convergence samples per run")
        ->capture_default_str();
    CliOverrides var_overrides;
    add_override_options(*var, var_overrides);

    // -- dump-preset ----------------------------------------------------
    auto* dump = app.add_subcommand("dump-preset", "Write a preset's input files");
    std::string dump_name;
    dump->add_option("name", dump_name, "Preset name")
        ->required()
        ->check(CLI::IsMember(vreg::preset_names()));
    std::string dump_out = ".";
    dump->add_option("-o,--out", dump_out, "Target directory")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            if (run_scenario.empty() && run_manifest.empty())
                throw vreg::ConfigError("run needs --scenario or --manifest");
            return cmd_run(run_scenario, run_manifest, run_overrides, run_out, no_trace,
                           no_oracle, plot, trace_stride);
        }
        if (model->parsed()) return cmd_model(model_scenario, model_overrides, model_out);
        if (var->parsed())
            return cmd_variance_report(var_names, var_overrides, var_out, min_post_samples);
        if (dump->parsed()) {
            vreg::dump_preset(dump_name, dump_out);
            std::printf("wrote %s fixtures to %s\n", dump_name.c_str(), dump_out.c_str());
            return 0;
        }
    } catch (const vreg::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const vreg::IngestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const vreg::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const vreg::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
