#include "vreg/reports.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "vreg/csv.hpp"
#include "vreg/errors.hpp"

namespace vreg {

TraceCsvWriter::TraceCsvWriter(const std::filesystem::path& path, long stride)
    : out_(path), path_(path), stride_(std::max<long>(1, stride)) {
    if (!out_) throw IoError("cannot write trace " + path.string());
    out_ << "k,slow_boundary,node,p,q,relaxed_p,v_hat,v_ac,mu_lower,mu_upper,alpha,beta,"
            "running_mean_v,eps,h,lagrangian,hull_infeasible\n";
}

void TraceCsvWriter::operator()(const TraceRecord& record) {
    if (record.k % stride_ != 0) return;
    const bool have_ac = record.v_ac.size() > 0;
    for (int node = 1; node <= record.v_hat.size(); ++node) {
        const int i = node - 1;
        out_ << record.k << ',' << (record.slow_boundary ? 1 : 0) << ',' << node << ','
             << format_double(record.p(i)) << ',' << format_double(record.q(i)) << ','
             << format_double(record.relaxed_p(i)) << ',' << format_double(record.v_hat(i))
             << ',' << (have_ac ? format_double(record.v_ac(i)) : std::string()) << ','
             << format_double(record.mu_lower(i)) << ',' << format_double(record.mu_upper(i))
             << ',' << format_double(record.alpha(i)) << ',' << format_double(record.beta(i))
             << ',' << format_double(record.running_mean_v(i)) << ','
             << format_double(record.eps) << ',' << format_double(record.h_value) << ','
             << format_double(record.lagrangian) << ',' << (record.hull_infeasible ? 1 : 0)
             << '\n';
    }
}

void TraceCsvWriter::close() {
    out_.flush();
    if (!out_) throw IoError("failed writing trace " + path_.string());
    out_.close();
}

VoltageTrajectoryWriter::VoltageTrajectoryWriter(const std::filesystem::path& path, long stride,
                                                 std::optional<Eigen::VectorXd> v_oracle)
    : out_(path), path_(path), stride_(std::max<long>(1, stride)), v_oracle_(std::move(v_oracle)) {
    if (!out_) throw IoError("cannot write voltage trajectory " + path.string());
    out_ << "k,node,v,running_mean_v,v_relaxed_optimum\n";
}

void VoltageTrajectoryWriter::operator()(const TraceRecord& record) {
    if (record.k % stride_ != 0) return;
    const Eigen::VectorXd& v = record.operational_voltage();
    for (int node = 1; node <= v.size(); ++node) {
        out_ << record.k << ',' << node << ',' << format_double(v(node - 1)) << ','
             << format_double(record.running_mean_v(node - 1)) << ',';
        if (v_oracle_) out_ << format_double((*v_oracle_)(node - 1));
        out_ << '\n';
    }
}

void VoltageTrajectoryWriter::close() {
    out_.flush();
    if (!out_) throw IoError("failed writing voltage trajectory " + path_.string());
    out_.close();
}

void write_variance_csv(const std::vector<VarianceReportRow>& rows,
                        const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write variance report " + path.string());
    out << "run,node,post_samples,converged_at,mean_v,variance_v,variance_bound,"
           "variance_bound_per_device\n";
    for (const VarianceReportRow& row : rows) {
        for (int node = 1; node <= row.mean_v.size(); ++node) {
            const int i = node - 1;
            out << row.preset << ',' << node << ',' << row.post_samples << ','
                << row.converged_at << ',' << format_double(row.mean_v(i)) << ','
                << format_double(row.variance_v(i)) << ',' << format_double(row.bound(i)) << ','
                << format_double(row.bound_per_device(i)) << '\n';
        }
    }
    if (!out) throw IoError("failed writing variance report " + path.string());
}

void write_band_csv(const SystemInstance& instance, const Eigen::VectorXd& v_uncontrolled,
                    const RunResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write band report " + path.string());
    out << "node,v_uncontrolled,v_controlled_mean,ci_low,ci_high,v_lower,v_upper,"
           "v_lower_tightened,v_upper_tightened\n";
    const RunningStats& stats =
        result.post_stats.count > 0 ? result.post_stats : result.stats;
    const Eigen::VectorXd half = stats.ci_halfwidth_v();
    for (int node = 1; node <= instance.topology.load_nodes(); ++node) {
        const int i = node - 1;
        out << node << ',' << format_double(v_uncontrolled(i)) << ','
            << format_double(stats.mean_v(i)) << ',' << format_double(stats.mean_v(i) - half(i))
            << ',' << format_double(stats.mean_v(i) + half(i)) << ','
            << format_double(instance.v_lower_orig(i)) << ','
            << format_double(instance.v_upper_orig(i)) << ','
            << format_double(instance.model.v_lower(i)) << ','
            << format_double(instance.model.v_upper(i)) << '\n';
    }
    if (!out) throw IoError("failed writing band report " + path.string());
}

namespace {

nlohmann::json vector_stats_json(const Eigen::VectorXd& v) {
    return {{"min", v.minCoeff()}, {"max", v.maxCoeff()}, {"mean", v.mean()}};
}

}  // namespace

void write_summary(const RunSummary& summary, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["tool_version"] = kToolVersion;
    doc["scenario"] = summary.scenario;
    doc["timestep"] = summary.timestep;
    doc["iterations_run"] = summary.result->iterations_run;
    doc["converged_at"] = summary.result->converged_at;
    doc["stepsize"] = summary.params.schedule.value;
    doc["slow_ratio"] = summary.params.slow_ratio;
    doc["seed"] = summary.params.seed;
    doc["voltage_mode"] =
        summary.params.voltage_mode == VoltageMode::kLinear ? "linear" : "ac";

    const RunResult& result = *summary.result;
    doc["diagnostics"] = {{"max_incentive_abs", result.max_signal_abs},
                          {"max_residual_norm", result.max_residual_norm},
                          {"max_dual_entry", result.max_dual_entry},
                          {"hull_infeasible_any", result.hull_infeasible_any}};
    doc["final_voltage"] = vector_stats_json(result.last_voltage);
    if (result.stats.count > 1) {
        doc["voltage_mean"] = vector_stats_json(result.stats.mean_v);
        doc["voltage_variance"] = vector_stats_json(result.stats.variance_v());
    }
    if (result.post_stats.count > 1) {
        doc["post"] = {{"samples", result.post_stats.count},
                       {"voltage_mean", vector_stats_json(result.post_stats.mean_v)},
                       {"voltage_variance", vector_stats_json(result.post_stats.variance_v())},
                       {"h_mean", result.post_stats.mean_h},
                       {"h_variance", result.post_stats.variance_h()},
                       {"upper_limit_exceedances", result.post_upper_violations.sum()},
                       {"lower_limit_exceedances", result.post_lower_violations.sum()}};
        // Worst-node empirical frequency of straying past the original
        // limits; compare against variance/(2 margin^2) when a margin is set.
        const SystemInstance& instance = *summary.instance;
        if (instance.robust_margin > 0.0) {
            double worst_freq = 0.0;
            for (int i = 0; i < result.post_upper_violations.size(); ++i)
                worst_freq = std::max(
                    worst_freq,
                    static_cast<double>(result.post_upper_violations(i) +
                                        result.post_lower_violations(i)) /
                        static_cast<double>(result.post_stats.count));
            const double cap = result.post_stats.variance_v().maxCoeff() /
                               (2.0 * instance.robust_margin * instance.robust_margin);
            doc["post"]["worst_limit_exceedance_freq"] = worst_freq;
            doc["post"]["chebyshev_cap_per_side"] = cap;
        }
    }
    if (summary.v_uncontrolled)
        doc["uncontrolled_voltage"] = vector_stats_json(*summary.v_uncontrolled);
    if (summary.oracle != nullptr) {
        doc["relaxed_optimum"] = {{"primal_value", summary.oracle->primal_value},
                                  {"dual_value", summary.oracle->dual_value},
                                  {"duality_gap", summary.oracle->primal_value -
                                                      summary.oracle->dual_value},
                                  {"max_violation", summary.oracle->max_violation},
                                  {"complementarity", summary.oracle->complementarity},
                                  {"iterations", summary.oracle->iterations},
                                  {"voltage", vector_stats_json(summary.oracle->v_hat)}};
        if (summary.relaxation_deviation)
            doc["relaxed_optimum"]["best_response_deviation"] = *summary.relaxation_deviation;
    } else if (!summary.oracle_error.empty()) {
        doc["relaxed_optimum"] = {{"error", summary.oracle_error}};
    }
    if (!summary.warnings.empty()) doc["warnings"] = summary.warnings;

    std::ofstream out(path);
    if (!out) throw IoError("cannot write summary " + path.string());
    out << doc.dump(2) << "\n";
    if (!out) throw IoError("failed writing summary " + path.string());
}

void write_svg_chart(const std::vector<SvgSeries>& series, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::filesystem::path& path) {
    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
    bool first = true;
    for (const SvgSeries& s : series) {
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (first) {
                x_min = x_max = s.x[i];
                y_min = y_max = s.y[i];
                first = false;
            }
            x_min = std::min(x_min, s.x[i]);
            x_max = std::max(x_max, s.x[i]);
            y_min = std::min(y_min, s.y[i]);
            y_max = std::max(y_max, s.y[i]);
        }
    }
    if (x_max <= x_min) x_max = x_min + 1.0;
    if (y_max <= y_min) y_max = y_min + 1.0;
    const double pad_y = 0.05 * (y_max - y_min);
    y_min -= pad_y;
    y_max += pad_y;

    constexpr double kWidth = 900, kHeight = 500;
    constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
    const auto sx = [&](double x) {
        return kLeft + (x - x_min) / (x_max - x_min) * (kWidth - kLeft - kRight);
    };
    const auto sy = [&](double y) {
        return kHeight - kBottom - (y - y_min) / (y_max - y_min) * (kHeight - kTop - kBottom);
    };

    std::ofstream out(path);
    if (!out) throw IoError("cannot write chart " + path.string());
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << kWidth << "' height='"
        << kHeight << "' viewBox='0 0 " << kWidth << ' ' << kHeight << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << kWidth / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
        << "</text>\n"
        << "<text x='" << kWidth / 2 << "' y='" << kHeight - 12
        << "' text-anchor='middle' font-size='12'>" << x_label << "</text>\n"
        << "<text x='16' y='" << kHeight / 2 << "' text-anchor='middle' font-size='12' "
        << "transform='rotate(-90 16 " << kHeight / 2 << ")'>" << y_label << "</text>\n";
    // Axes with min/max tick labels.
    out << "<line x1='" << kLeft << "' y1='" << kHeight - kBottom << "' x2='" << kWidth - kRight
        << "' y2='" << kHeight - kBottom << "' stroke='black'/>\n"
        << "<line x1='" << kLeft << "' y1='" << kTop << "' x2='" << kLeft << "' y2='"
        << kHeight - kBottom << "' stroke='black'/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double fx = x_min + (x_max - x_min) * tick / 4.0;
        const double fy = y_min + (y_max - y_min) * tick / 4.0;
        out << "<text x='" << sx(fx) << "' y='" << kHeight - kBottom + 16
            << "' text-anchor='middle' font-size='10'>" << format_double(fx) << "</text>\n"
            << "<text x='" << kLeft - 6 << "' y='" << sy(fy) + 3
            << "' text-anchor='end' font-size='10'>" << format_double(fy) << "</text>\n";
    }
    double legend_y = kTop + 8;
    for (const SvgSeries& s : series) {
        if (s.x.empty()) continue;
        out << "<polyline fill='none' stroke='" << s.color << "' stroke-width='1' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i)
            out << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
        out << "'/>\n";
        out << "<text x='" << kWidth - kRight - 4 << "' y='" << legend_y
            << "' text-anchor='end' font-size='11' fill='" << s.color << "'>" << s.label
            << "</text>\n";
        legend_y += 14;
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed writing chart " + path.string());
}

}  // namespace vreg
