#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "vreg/scenario.hpp"
#include "vreg/sim.hpp"

namespace vreg {

/// Streams the full per-iteration, per-node state in long format. With a
/// stride only every stride-th iteration is written; the stride is a pure
/// function of the configured iteration count, so reruns of the same
/// manifest produce byte-identical files.
class TraceCsvWriter {
public:
    TraceCsvWriter(const std::filesystem::path& path, long stride = 1);

    void operator()(const TraceRecord& record);
    /// Flushes and checks the stream; call once after the run.
    void close();

    static long auto_stride(long iterations) {
        return std::max<long>(1, iterations / 4000);
    }

private:
    std::ofstream out_;
    std::filesystem::path path_;
    long stride_ = 1;
};

/// Per-iteration voltage trajectory with its running mean, against the
/// relaxed-optimum voltage when an oracle solution is available.
class VoltageTrajectoryWriter {
public:
    VoltageTrajectoryWriter(const std::filesystem::path& path, long stride,
                            std::optional<Eigen::VectorXd> v_oracle);

    void operator()(const TraceRecord& record);
    void close();

private:
    std::ofstream out_;
    std::filesystem::path path_;
    long stride_ = 1;
    std::optional<Eigen::VectorXd> v_oracle_;
};

/// Post-convergence voltage spread per node with both analytic caps, one
/// block of rows per labelled run.
void write_variance_csv(const std::vector<VarianceReportRow>& rows,
                        const std::filesystem::path& path);

/// Per-node envelope: uncontrolled voltage vs the controlled
/// post-convergence mean and its confidence interval, between the original
/// and tightened limits.
void write_band_csv(const SystemInstance& instance, const Eigen::VectorXd& v_uncontrolled,
                    const RunResult& result, const std::filesystem::path& path);

/// Everything a reader wants to know about one finished run, as JSON.
struct RunSummary {
    std::string scenario;
    long timestep = 0;
    RunParams params;
    const RunResult* result = nullptr;
    const SystemInstance* instance = nullptr;
    std::optional<Eigen::VectorXd> v_uncontrolled;
    const OracleSolution* oracle = nullptr;           // null = not computed
    std::string oracle_error;                         // non-empty = attempted, failed
    std::optional<double> relaxation_deviation;       // from exact_relaxation_check
    std::vector<std::string> warnings;
};

void write_summary(const RunSummary& summary, const std::filesystem::path& path);

/// Minimal self-contained SVG line chart of per-node series; good enough
/// to eyeball a run without external tooling.
struct SvgSeries {
    std::string label;
    std::string color;
    std::vector<double> x;
    std::vector<double> y;
};

void write_svg_chart(const std::vector<SvgSeries>& series, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::filesystem::path& path);

}  // namespace vreg
