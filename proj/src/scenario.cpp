#include "vreg/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>
#include <utility>

#include "json.hpp"
#include "vreg/csv.hpp"
#include "vreg/errors.hpp"

namespace vreg {

namespace {

// ---- IEEE-37 style preset tables -------------------------------------
// Single-phase equivalent of the 37-node test feeder: node 0 is the
// substation, kParent[i-1] is the upstream node of load node i.
constexpr int kIeee37Parent[36] = {0,  1,  2,  2,  2,  3,  3,  4,  5,  5,  8,  8,
                                   9,  10, 11, 12, 12, 13, 13, 14, 14, 14, 16, 16,
                                   17, 21, 21, 27, 28, 28, 29, 30, 30, 31, 34, 34};

constexpr int kIeee37PvNodes[18] = {4,  7,  10, 13, 17, 20, 22, 23, 26,
                                    28, 29, 30, 31, 32, 33, 34, 35, 36};

constexpr int kIeee37TclNodes[25] = {2,  5,  6,  7,  9,  10, 11, 13, 14, 16, 18, 19, 20,
                                     21, 22, 24, 26, 27, 28, 29, 30, 32, 33, 35, 36};

// The source data sheet rates inverter units, not nodes ("unit 3",
// "units 15-16"); ratings are mapped to the PV node list positionally.
double pv_rating_kva(int position) {
    if (position == 2) return 300.0;
    if (position == 14 || position == 15) return 350.0;
    return 200.0;
}

int node_depth(int node) {
    int depth = 0;
    while (node != 0) {
        node = kIeee37Parent[node - 1];
        ++depth;
    }
    return depth;
}

// Heavier conductors near the substation, lighter laterals further out.
double ieee37_line_r(int depth) {
    if (depth <= 2) return 0.006;
    if (depth <= 5) return 0.009;
    if (depth <= 8) return 0.012;
    return 0.015;
}

// Deterministic stand-in for the unavailable measured feeder loads.
double base_load_kw(int node) { return 20.0 + 3.0 * ((node * 7) % 11); }

double diurnal_pv_bell(long hour) {
    if (hour <= 6 || hour >= 18) return 0.0;
    const double s = std::sin(M_PI * (static_cast<double>(hour) - 6.0) / 12.0);
    return s * s;
}

double diurnal_load_shape(long hour) {
    return 0.7 + 0.15 * (1.0 - std::cos(2.0 * M_PI * (static_cast<double>(hour) - 4.0) / 24.0));
}

double diurnal_ambient_f(long hour) {
    const double peak_offset = (static_cast<double>(hour) - 14.0) / 5.0;
    return 90.0 + 10.0 * std::exp(-peak_offset * peak_offset);
}

constexpr long kProfileHours = 24;

TclSpec household_tcl() {
    TclSpec tcl;
    tcl.t_in_f = 76.5;
    tcl.t_out_f = 92.0;  // overridden by the ambient profile when present
    tcl.theta1 = 0.1;
    tcl.theta2_f_per_w = -0.001;
    tcl.t_min_f = 70.0;
    tcl.t_max_f = 80.0;
    tcl.t_nom_f = 75.0;
    tcl.cost_t = 20.0;
    tcl.rates.rates_w = {0.0, 4000.0};
    return tcl;
}

/// One device standing for `count` identical TCLs dispatched together: the
/// temperature response per aggregate watt shrinks by the count, the
/// discomfort weight grows by it, so the relaxed aggregate optimum is
/// exactly count times the individual optimum.
TclSpec aggregated_tcl(const TclSpec& unit, int count, const RateGrid& rates) {
    TclSpec agg = unit;
    agg.theta2_f_per_w = unit.theta2_f_per_w / count;
    agg.cost_t = unit.cost_t * count;
    agg.rates = rates;
    return agg;
}

FeederTopology ieee37_topology() {
    FeederTopology topology;
    topology.name = "ieee37";
    topology.node_count = 37;
    topology.v0 = 1.0;
    topology.power_base_kva = 1000.0;
    for (int node = 1; node <= 36; ++node) {
        const double r = ieee37_line_r(node_depth(node));
        topology.lines.push_back(Line{kIeee37Parent[node - 1], node, r, r});
    }
    return topology;
}

std::vector<CustomerSpec> ieee37_inventory(int scenario) {
    std::vector<CustomerSpec> customers(36);
    for (int node = 1; node <= 36; ++node) customers[node - 1].node = node;
    for (int i = 0; i < 18; ++i) {
        const int node = kIeee37PvNodes[i];
        PvSpec pv;
        pv.eta_pu = pv_rating_kva(i) / 1000.0;
        pv.p_av_pu = 0.85 * pv.eta_pu;  // nameplate availability; profiles override
        pv.cost_p = 3.0;
        pv.cost_q = 1.0;
        customers[node - 1].pvs.push_back(pv);
    }
    const TclSpec unit = household_tcl();
    for (int node : kIeee37TclNodes) {
        CustomerSpec& customer = customers[node - 1];
        switch (scenario) {
            case 1: {  // one aggregate device, all-or-nothing
                RateGrid rates;
                rates.rates_w = {0.0, 60000.0};
                customer.tcls.push_back(aggregated_tcl(unit, 15, rates));
                break;
            }
            case 2:  // 15 independently dispatched units
                for (int d = 0; d < 15; ++d) customer.tcls.push_back(unit);
                break;
            case 3:  // one aggregate device, 4 kW granularity
                customer.tcls.push_back(
                    aggregated_tcl(unit, 15, uniform_rate_grid(4000.0, 16)));
                break;
            default:
                throw ConfigError("unknown thermal dispatch scenario " +
                                  std::to_string(scenario));
        }
    }
    return customers;
}

ProfileBundle ieee37_profiles() {
    ProfileBundle bundle;
    const int n = 36;
    for (long t = 0; t < kProfileHours; ++t) {
        Eigen::VectorXd load_p = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd load_q = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd avail = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd ambient = Eigen::VectorXd::Constant(n, diurnal_ambient_f(t));
        for (int node = 1; node <= n; ++node) {
            load_p[node - 1] = -base_load_kw(node) * diurnal_load_shape(t);
            load_q[node - 1] = 0.33 * load_p[node - 1];
        }
        for (int i = 0; i < 18; ++i)
            avail[kIeee37PvNodes[i] - 1] = 0.85 * pv_rating_kva(i) * diurnal_pv_bell(t);
        bundle.baseline_p_kw.values.push_back(std::move(load_p));
        bundle.baseline_q_kvar.values.push_back(std::move(load_q));
        bundle.availability_kw.values.push_back(std::move(avail));
        bundle.ambient_f.values.push_back(std::move(ambient));
    }
    return bundle;
}

FeederTopology chain_topology(const std::string& name, int load_nodes, double r, double x) {
    FeederTopology topology;
    topology.name = name;
    topology.node_count = load_nodes + 1;
    topology.v0 = 1.0;
    topology.power_base_kva = 1000.0;
    for (int node = 1; node <= load_nodes; ++node)
        topology.lines.push_back(Line{node - 1, node, r, x});
    return topology;
}

struct PresetParts {
    FeederTopology topology;
    std::vector<CustomerSpec> customers;
    ProfileBundle profiles;  // empty series when the preset has none
};

PresetParts build_preset_parts(const std::string& name) {
    PresetParts parts;
    if (name == "toy1") {
        // Single PV behind one resistive line; the binding optimum is a
        // one-dimensional stationarity condition, handy as ground truth.
        parts.topology = chain_topology("toy1", 1, 0.01, 0.0);
        CustomerSpec customer;
        customer.node = 1;
        customer.pvs.push_back(PvSpec{1.0, 1.0, 3.0, 1.0});
        parts.customers.push_back(customer);
    } else if (name == "toy2") {
        parts.topology = chain_topology("toy2", 2, 0.05, 0.05);
        CustomerSpec customer;
        customer.node = 2;
        customer.pvs.push_back(PvSpec{1.0, 1.2, 0.03, 0.01});
        parts.customers.push_back(customer);
    } else if (name == "var10") {
        parts.topology = chain_topology("var10", 10, 0.03, 0.03);
        for (int node = 1; node <= 10; ++node) {
            CustomerSpec customer;
            customer.node = node;
            TclSpec tcl = household_tcl();
            tcl.t_out_f = 87.0;  // relaxed optimum 1200 W, off the 1 kW grid
            tcl.rates = uniform_rate_grid(1000.0, 5);
            customer.tcls.push_back(tcl);
            customer.tcls.push_back(tcl);
            parts.customers.push_back(customer);
        }
    } else if (name == "ieee37-s1" || name == "ieee37-s2" || name == "ieee37-s3") {
        const int scenario = name.back() - '0';
        parts.topology = ieee37_topology();
        parts.customers = ieee37_inventory(scenario);
        parts.profiles = ieee37_profiles();
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return parts;
}

ScenarioConfig preset_config(const std::string& name) {
    ScenarioConfig config;
    config.preset = name;
    if (name == "toy1") {
        config.v_upper = 1.005;
        config.iterations = 20000;
        // The stiff quadratic cost needs prices near 300 to curtail; the
        // single-constraint dual stays stable under a far larger step.
        config.schedule.value = 100.0;
    } else if (name == "toy2") {
        config.iterations = 20000;
    } else if (name == "var10") {
        config.v_lower = 0.90;
        config.v_upper = 1.10;
        config.iterations = 14000;
        config.post_samples = 10000;
    } else if (name == "ieee37-s1" || name == "ieee37-s2" || name == "ieee37-s3") {
        config.iterations = 42000;
        config.slow_ratio = 60;
        config.robust_margin = 0.01;
        config.post_samples = 25000;
    } else {
        throw ConfigError("unknown preset '" + name + "'");
    }
    return config;
}

std::filesystem::path resolve_relative(const std::filesystem::path& base,
                                       const std::string& value) {
    const std::filesystem::path p(value);
    return p.is_absolute() ? p : base / p;
}

StepsizeMode mode_from_string(const std::string& s) {
    if (s == "constant") return StepsizeMode::kConstant;
    if (s == "diminishing") return StepsizeMode::kDiminishing;
    throw ConfigError("stepsize mode must be 'constant' or 'diminishing', got '" + s + "'");
}

std::string mode_to_string(StepsizeMode mode) {
    return mode == StepsizeMode::kConstant ? "constant" : "diminishing";
}

VoltageMode voltage_mode_from_string(const std::string& s) {
    if (s == "linear") return VoltageMode::kLinear;
    if (s == "ac") return VoltageMode::kNonlinearSweep;
    throw ConfigError("voltage mode must be 'linear' or 'ac', got '" + s + "'");
}

std::string voltage_mode_to_string(VoltageMode mode) {
    return mode == VoltageMode::kLinear ? "linear" : "ac";
}

nlohmann::json config_to_json(const ScenarioConfig& config) {
    nlohmann::json doc;
    doc["preset"] = config.preset;
    if (!config.feeder_file.empty()) doc["feeder"] = config.feeder_file.string();
    if (!config.inventory_file.empty()) doc["inventory"] = config.inventory_file.string();
    if (!config.baseline_p_profile.empty())
        doc["baseline_p"] = config.baseline_p_profile.string();
    if (!config.baseline_q_profile.empty())
        doc["baseline_q"] = config.baseline_q_profile.string();
    if (!config.availability_profile.empty())
        doc["availability"] = config.availability_profile.string();
    if (!config.ambient_profile.empty()) doc["ambient"] = config.ambient_profile.string();
    doc["timestep"] = config.timestep;
    doc["iterations"] = config.iterations;
    doc["slow_ratio"] = config.slow_ratio;
    doc["stepsize"] = {{"mode", mode_to_string(config.schedule.mode)},
                       {"value", config.schedule.value}};
    doc["v_lower"] = config.v_lower;
    doc["v_upper"] = config.v_upper;
    doc["robust_margin"] = config.robust_margin;
    doc["seed"] = config.seed;
    doc["voltage_mode"] = voltage_mode_to_string(config.voltage_mode);
    doc["post_samples"] = config.post_samples;
    doc["stop_when_sampled"] = config.stop_when_sampled;
    doc["threads"] = config.threads;
    return doc;
}

ScenarioConfig config_from_json(const nlohmann::json& doc,
                                const std::filesystem::path& base_dir) {
    ScenarioConfig config;
    try {
        config.preset = doc.value("preset", std::string("custom"));
        if (is_preset(config.preset)) config = preset_config(config.preset);
        if (doc.contains("feeder"))
            config.feeder_file = resolve_relative(base_dir, doc.at("feeder").get<std::string>());
        if (doc.contains("inventory"))
            config.inventory_file =
                resolve_relative(base_dir, doc.at("inventory").get<std::string>());
        if (doc.contains("baseline_p"))
            config.baseline_p_profile =
                resolve_relative(base_dir, doc.at("baseline_p").get<std::string>());
        if (doc.contains("baseline_q"))
            config.baseline_q_profile =
                resolve_relative(base_dir, doc.at("baseline_q").get<std::string>());
        if (doc.contains("availability"))
            config.availability_profile =
                resolve_relative(base_dir, doc.at("availability").get<std::string>());
        if (doc.contains("ambient"))
            config.ambient_profile =
                resolve_relative(base_dir, doc.at("ambient").get<std::string>());
        config.timestep = doc.value("timestep", config.timestep);
        config.iterations = doc.value("iterations", config.iterations);
        config.slow_ratio = doc.value("slow_ratio", config.slow_ratio);
        if (doc.contains("stepsize")) {
            const auto& step = doc.at("stepsize");
            config.schedule.mode =
                mode_from_string(step.value("mode", mode_to_string(config.schedule.mode)));
            config.schedule.value = step.value("value", config.schedule.value);
        }
        config.v_lower = doc.value("v_lower", config.v_lower);
        config.v_upper = doc.value("v_upper", config.v_upper);
        config.robust_margin = doc.value("robust_margin", config.robust_margin);
        config.seed = doc.value("seed", config.seed);
        if (doc.contains("voltage_mode"))
            config.voltage_mode =
                voltage_mode_from_string(doc.at("voltage_mode").get<std::string>());
        config.post_samples = doc.value("post_samples", config.post_samples);
        config.stop_when_sampled = doc.value("stop_when_sampled", config.stop_when_sampled);
        config.threads = doc.value("threads", config.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scenario description: ") + e.what());
    }
    return config;
}

std::uint64_t file_digest(const std::filesystem::path& path) {
    if (path.empty()) return 0;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string() + " for digesting");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return fnv1a64(buffer.str());
}

}  // namespace

void ScenarioConfig::validate() const {
    if (!is_preset(preset) && preset != "custom")
        throw ConfigError("unknown preset '" + preset + "'");
    if (preset == "custom" && feeder_file.empty())
        throw ConfigError("custom scenarios need a feeder file");
    if (slow_ratio < 1) throw ConfigError("slow-to-fast ratio must be at least 1");
    if (iterations < slow_ratio)
        throw ConfigError("iteration budget must cover at least one slow frame");
    schedule.validate();
    if (!(v_lower < v_upper))
        throw ConfigError("lower voltage limit must be below the upper limit");
    if (robust_margin < 0.0) throw ConfigError("robust margin must be nonnegative");
    if (2.0 * robust_margin >= v_upper - v_lower)
        throw ConfigError("robust margin leaves an empty voltage band");
    if (post_samples < 0) throw ConfigError("post-convergence sample target must be nonnegative");
    if (threads < 1) throw ConfigError("thread count must be at least 1");
    if (timestep < -1) throw ConfigError("timestep must be -1 (peak) or a row index");
}

std::vector<std::string> preset_names() {
    return {"toy1", "toy2", "var10", "ieee37-s1", "ieee37-s2", "ieee37-s3"};
}

bool is_preset(const std::string& name) {
    const auto names = preset_names();
    return std::find(names.begin(), names.end(), name) != names.end();
}

ScenarioConfig load_scenario(const std::string& preset_or_path,
                             const ScenarioOverrides& overrides) {
    ScenarioConfig config;
    if (is_preset(preset_or_path)) {
        config = preset_config(preset_or_path);
    } else {
        const std::filesystem::path path(preset_or_path);
        std::ifstream in(path);
        if (!in)
            throw ConfigError("'" + preset_or_path +
                              "' is neither a preset name nor a readable scenario file");
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("scenario file " + path.string() + ": " + e.what());
        }
        config = config_from_json(doc, path.parent_path());
    }

    if (overrides.iterations) config.iterations = *overrides.iterations;
    if (overrides.slow_ratio) config.slow_ratio = *overrides.slow_ratio;
    if (overrides.stepsize_mode) config.schedule.mode = mode_from_string(*overrides.stepsize_mode);
    if (overrides.stepsize) config.schedule.value = *overrides.stepsize;
    if (overrides.v_lower) config.v_lower = *overrides.v_lower;
    if (overrides.v_upper) config.v_upper = *overrides.v_upper;
    if (overrides.robust_margin) config.robust_margin = *overrides.robust_margin;
    if (overrides.seed) config.seed = *overrides.seed;
    if (overrides.voltage_mode)
        config.voltage_mode = voltage_mode_from_string(*overrides.voltage_mode);
    if (overrides.timestep) config.timestep = *overrides.timestep;
    if (overrides.post_samples) config.post_samples = *overrides.post_samples;
    if (overrides.stop_when_sampled) config.stop_when_sampled = *overrides.stop_when_sampled;
    if (overrides.threads) config.threads = *overrides.threads;
    config.validate();
    return config;
}

double ProfileSeries::at(long t, int node, double fallback) const {
    if (values.empty()) return fallback;
    const long clamped = std::clamp<long>(t, 0, timesteps() - 1);
    return values[static_cast<std::size_t>(clamped)](node - 1);
}

ProfileSeries ingest_profile_csv(const std::filesystem::path& path, int load_nodes,
                                 const std::string& expected_unit, double default_value,
                                 bool warn_missing, std::vector<std::string>& warnings) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open profile " + path.string());

    std::vector<std::tuple<long, int, double>> rows;
    long max_t = -1;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view trimmed = trim(line);
        if (trimmed.empty()) continue;
        const auto fields = split_csv_line(trimmed);
        if (line_no == 1 && !fields.empty() && trim(fields[0]) == "timestep") {
            // Header row; the value column carries the unit flag.
            if (fields.size() != 3)
                throw IngestError(path.string() + ":1: header must be timestep,node,value_<unit>");
            const std::string_view value_col = trim(fields[2]);
            const std::string expected = "value_" + expected_unit;
            if (value_col != expected)
                throw IngestError(path.string() + ":1: expected column '" + expected +
                                  "', got '" + std::string(value_col) + "'");
            continue;
        }
        if (fields.size() != 3)
            throw IngestError(path.string() + ":" + std::to_string(line_no) +
                              ": expected 3 fields, got " + std::to_string(fields.size()));
        long t = 0;
        long node = 0;
        double value = 0.0;
        if (!parse_long(fields[0], t) || t < 0)
            throw IngestError(path.string() + ":" + std::to_string(line_no) +
                              ": bad timestep '" + std::string(fields[0]) + "'");
        if (!parse_long(fields[1], node) || node < 1 || node > load_nodes)
            throw IngestError(path.string() + ":" + std::to_string(line_no) + ": bad node '" +
                              std::string(fields[1]) + "' (feeder has " +
                              std::to_string(load_nodes) + " load nodes)");
        if (!parse_double(fields[2], value))
            throw IngestError(path.string() + ":" + std::to_string(line_no) + ": bad value '" +
                              std::string(fields[2]) + "'");
        rows.emplace_back(t, static_cast<int>(node), value);
        max_t = std::max(max_t, t);
    }

    ProfileSeries series;
    if (max_t < 0) {
        if (warn_missing)
            warnings.push_back(path.string() + " has no data rows; all nodes defaulted to " +
                               format_double(default_value));
        return series;
    }
    series.values.assign(static_cast<std::size_t>(max_t + 1),
                         Eigen::VectorXd::Constant(load_nodes, default_value));
    std::vector<bool> node_seen(static_cast<std::size_t>(load_nodes) + 1, false);
    for (const auto& [t, node, value] : rows) {
        series.values[static_cast<std::size_t>(t)](node - 1) = value;
        node_seen[static_cast<std::size_t>(node)] = true;
    }
    if (warn_missing) {
        std::string missing;
        for (int node = 1; node <= load_nodes; ++node)
            if (!node_seen[static_cast<std::size_t>(node)])
                missing += (missing.empty() ? "" : ", ") + std::to_string(node);
        if (!missing.empty())
            warnings.push_back(path.string() + " is missing nodes " + missing +
                               "; defaulted to " + format_double(default_value));
    }
    return series;
}

ProfileBundle ingest_profiles(const ScenarioConfig& config, int load_nodes) {
    ProfileBundle bundle;
    if (!config.baseline_p_profile.empty())
        bundle.baseline_p_kw = ingest_profile_csv(config.baseline_p_profile, load_nodes, "kw",
                                                  0.0, true, bundle.warnings);
    if (!config.baseline_q_profile.empty())
        bundle.baseline_q_kvar = ingest_profile_csv(config.baseline_q_profile, load_nodes,
                                                    "kvar", 0.0, true, bundle.warnings);
    if (!config.availability_profile.empty())
        bundle.availability_kw = ingest_profile_csv(config.availability_profile, load_nodes,
                                                    "kw", 0.0, false, bundle.warnings);
    if (!config.ambient_profile.empty())
        bundle.ambient_f = ingest_profile_csv(config.ambient_profile, load_nodes, "f", 95.0,
                                              false, bundle.warnings);
    return bundle;
}

void export_profile_csv(const ProfileSeries& series, const std::string& unit,
                        const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write profile " + path.string());
    out << "timestep,node,value_" << unit << "\n";
    for (long t = 0; t < series.timesteps(); ++t) {
        const Eigen::VectorXd& row = series.values[static_cast<std::size_t>(t)];
        for (int node = 1; node <= row.size(); ++node)
            out << t << ',' << node << ',' << format_double(row(node - 1)) << "\n";
    }
    if (!out) throw IoError("failed writing profile " + path.string());
}

std::vector<CustomerSpec> load_inventory(const std::filesystem::path& path,
                                         const FeederTopology& topology) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open inventory file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("inventory file " + path.string() + ": " + e.what());
    }
    const double base_kva = topology.power_base_kva;
    std::vector<CustomerSpec> customers;
    try {
        for (const auto& jcust : doc.at("customers")) {
            CustomerSpec customer;
            customer.node = jcust.at("node").get<int>();
            for (const auto& jpv : jcust.value("pvs", nlohmann::json::array())) {
                PvSpec pv;
                pv.p_av_pu = jpv.at("p_av_kw").get<double>() / base_kva;
                pv.eta_pu = jpv.at("eta_kva").get<double>() / base_kva;
                pv.cost_p = jpv.value("cost_p", 1.0);
                pv.cost_q = jpv.value("cost_q", 1.0);
                const int count = jpv.value("count", 1);
                for (int c = 0; c < count; ++c) customer.pvs.push_back(pv);
            }
            for (const auto& jtcl : jcust.value("tcls", nlohmann::json::array())) {
                TclSpec tcl;
                tcl.t_in_f = jtcl.at("t_in_f").get<double>();
                tcl.t_out_f = jtcl.at("t_out_f").get<double>();
                tcl.theta1 = jtcl.value("theta1", 0.1);
                tcl.theta2_f_per_w = jtcl.at("theta2_f_per_kw").get<double>() / 1000.0;
                tcl.t_min_f = jtcl.at("t_min_f").get<double>();
                tcl.t_max_f = jtcl.at("t_max_f").get<double>();
                tcl.t_nom_f = jtcl.value("t_nom_f", 75.0);
                tcl.cost_t = jtcl.value("cost_t", 20.0);
                tcl.rates.rates_w.clear();
                for (const auto& rate : jtcl.at("rates_kw"))
                    tcl.rates.rates_w.push_back(rate.get<double>() * 1000.0);
                const int count = jtcl.value("count", 1);
                for (int c = 0; c < count; ++c) customer.tcls.push_back(tcl);
            }
            customers.push_back(std::move(customer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("inventory file " + path.string() + ": " + e.what());
    }
    return customers;
}

void save_inventory(const std::vector<CustomerSpec>& customers, const FeederTopology& topology,
                    const std::filesystem::path& path) {
    const double base_kva = topology.power_base_kva;
    nlohmann::json doc;
    doc["customers"] = nlohmann::json::array();
    for (const CustomerSpec& customer : customers) {
        if (!customer.participating()) continue;
        nlohmann::json jcust;
        jcust["node"] = customer.node;
        if (!customer.pvs.empty()) {
            jcust["pvs"] = nlohmann::json::array();
            for (const PvSpec& pv : customer.pvs)
                jcust["pvs"].push_back({{"p_av_kw", pv.p_av_pu * base_kva},
                                        {"eta_kva", pv.eta_pu * base_kva},
                                        {"cost_p", pv.cost_p},
                                        {"cost_q", pv.cost_q}});
        }
        if (!customer.tcls.empty()) {
            jcust["tcls"] = nlohmann::json::array();
            for (const TclSpec& tcl : customer.tcls) {
                nlohmann::json jtcl;
                jtcl["t_in_f"] = tcl.t_in_f;
                jtcl["t_out_f"] = tcl.t_out_f;
                jtcl["theta1"] = tcl.theta1;
                jtcl["theta2_f_per_kw"] = tcl.theta2_f_per_w * 1000.0;
                jtcl["t_min_f"] = tcl.t_min_f;
                jtcl["t_max_f"] = tcl.t_max_f;
                jtcl["t_nom_f"] = tcl.t_nom_f;
                jtcl["cost_t"] = tcl.cost_t;
                nlohmann::json rates = nlohmann::json::array();
                for (double rate : tcl.rates.rates_w) rates.push_back(rate / 1000.0);
                jtcl["rates_kw"] = rates;
                jcust["tcls"].push_back(jtcl);
            }
        }
        doc["customers"].push_back(jcust);
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write inventory " + path.string());
    out << doc.dump(2) << "\n";
}

ResolvedScenario resolve_instance(const ScenarioConfig& config) {
    config.validate();
    ResolvedScenario resolved;
    resolved.config = config;

    PresetParts parts;
    if (is_preset(config.preset)) {
        parts = build_preset_parts(config.preset);
        if (!config.feeder_file.empty()) parts.topology = load_feeder(config.feeder_file);
        if (!config.inventory_file.empty())
            parts.customers = load_inventory(config.inventory_file, parts.topology);
    } else {
        parts.topology = load_feeder(config.feeder_file);
        if (!config.inventory_file.empty())
            parts.customers = load_inventory(config.inventory_file, parts.topology);
    }
    const int n = parts.topology.load_nodes();

    // Profile files, when named, replace the preset's built-in series.
    ProfileBundle file_profiles = ingest_profiles(config, n);
    ProfileBundle& profiles = parts.profiles;
    if (file_profiles.baseline_p_kw.timesteps() > 0 || !config.baseline_p_profile.empty())
        profiles.baseline_p_kw = std::move(file_profiles.baseline_p_kw);
    if (file_profiles.baseline_q_kvar.timesteps() > 0 || !config.baseline_q_profile.empty())
        profiles.baseline_q_kvar = std::move(file_profiles.baseline_q_kvar);
    if (file_profiles.availability_kw.timesteps() > 0 || !config.availability_profile.empty())
        profiles.availability_kw = std::move(file_profiles.availability_kw);
    if (file_profiles.ambient_f.timesteps() > 0 || !config.ambient_profile.empty())
        profiles.ambient_f = std::move(file_profiles.ambient_f);
    resolved.warnings = std::move(file_profiles.warnings);

    // Operating point: requested row, or the availability peak.
    long t = config.timestep;
    if (t < 0) {
        t = 0;
        double best = -1.0;
        for (long step = 0; step < profiles.availability_kw.timesteps(); ++step) {
            const double total = profiles.availability_kw.values[step].sum();
            if (total > best) {
                best = total;
                t = step;
            }
        }
    }
    resolved.timestep = t;

    SystemInstance& instance = resolved.instance;
    instance.topology = parts.topology;
    instance.customers = std::move(parts.customers);
    const double base_kva = instance.topology.power_base_kva;

    instance.baseline_p = Eigen::VectorXd::Zero(n);
    instance.baseline_q = Eigen::VectorXd::Zero(n);
    for (int node = 1; node <= n; ++node) {
        instance.baseline_p(node - 1) = profiles.baseline_p_kw.at(t, node, 0.0) / base_kva;
        instance.baseline_q(node - 1) = profiles.baseline_q_kvar.at(t, node, 0.0) / base_kva;
    }

    for (CustomerSpec& customer : instance.customers) {
        if (!customer.pvs.empty() && profiles.availability_kw.timesteps() > 0) {
            const double avail_pu =
                profiles.availability_kw.at(t, customer.node, 0.0) / base_kva;
            double rated = 0.0;
            for (const PvSpec& pv : customer.pvs) rated += pv.p_av_pu;
            for (PvSpec& pv : customer.pvs) {
                const double share =
                    rated > 0.0 ? pv.p_av_pu / rated
                                : 1.0 / static_cast<double>(customer.pvs.size());
                pv.p_av_pu = std::min(avail_pu * share, pv.eta_pu);
            }
        }
        if (!customer.tcls.empty() && profiles.ambient_f.timesteps() > 0) {
            const double ambient = profiles.ambient_f.at(t, customer.node, 95.0);
            for (TclSpec& tcl : customer.tcls) tcl.t_out_f = ambient;
        }
    }

    instance.v_lower_orig = Eigen::VectorXd::Constant(n, config.v_lower);
    instance.v_upper_orig = Eigen::VectorXd::Constant(n, config.v_upper);
    instance.robust_margin = config.robust_margin;
    Eigen::VectorXd control_lower = instance.v_lower_orig;
    Eigen::VectorXd control_upper = instance.v_upper_orig;
    if (config.robust_margin > 0.0) {
        const RobustBounds bounds =
            robust_limits(instance.v_lower_orig, instance.v_upper_orig, config.robust_margin);
        control_lower = bounds.v_lower;
        control_upper = bounds.v_upper;
    }
    instance.model = build_linear_model(instance.topology, control_lower, control_upper);
    instance.validate();
    return resolved;
}

RunParams run_params(const ScenarioConfig& config, bool keep_trace) {
    RunParams params;
    params.iterations = config.iterations;
    params.slow_ratio = config.slow_ratio;
    params.schedule = config.schedule;
    params.schedule.slow_frame = config.slow_ratio;
    params.seed = config.seed;
    params.voltage_mode = config.voltage_mode;
    params.keep_trace = keep_trace;
    params.threads = config.threads;
    params.stop_after_post_samples = config.stop_when_sampled ? config.post_samples : 0;
    return params;
}

void dump_preset(const std::string& name, const std::filesystem::path& dir) {
    if (!is_preset(name)) throw ConfigError("unknown preset '" + name + "'");
    std::filesystem::create_directories(dir);
    const PresetParts parts = build_preset_parts(name);
    ScenarioConfig config = preset_config(name);

    save_feeder(parts.topology, dir / "feeder.json");
    save_inventory(parts.customers, parts.topology, dir / "inventory.json");
    config.feeder_file = "feeder.json";
    config.inventory_file = "inventory.json";
    if (parts.profiles.baseline_p_kw.timesteps() > 0) {
        export_profile_csv(parts.profiles.baseline_p_kw, "kw", dir / "baseline_p.csv");
        config.baseline_p_profile = "baseline_p.csv";
    }
    if (parts.profiles.baseline_q_kvar.timesteps() > 0) {
        export_profile_csv(parts.profiles.baseline_q_kvar, "kvar", dir / "baseline_q.csv");
        config.baseline_q_profile = "baseline_q.csv";
    }
    if (parts.profiles.availability_kw.timesteps() > 0) {
        export_profile_csv(parts.profiles.availability_kw, "kw", dir / "availability.csv");
        config.availability_profile = "availability.csv";
    }
    if (parts.profiles.ambient_f.timesteps() > 0) {
        export_profile_csv(parts.profiles.ambient_f, "f", dir / "ambient.csv");
        config.ambient_profile = "ambient.csv";
    }

    // The scenario file round-trips through load_scenario as a custom
    // scenario with the same numbers the preset uses.
    nlohmann::json doc = config_to_json(config);
    doc["preset"] = "custom";
    std::ofstream out(dir / "scenario.json");
    if (!out) throw IoError("cannot write scenario description in " + dir.string());
    out << doc.dump(2) << "\n";
}

RunManifest make_manifest(const ScenarioConfig& config) {
    RunManifest manifest;
    manifest.config = config;
    manifest.feeder_digest = file_digest(config.feeder_file);
    manifest.inventory_digest = file_digest(config.inventory_file);
    manifest.baseline_p_digest = file_digest(config.baseline_p_profile);
    manifest.baseline_q_digest = file_digest(config.baseline_q_profile);
    manifest.availability_digest = file_digest(config.availability_profile);
    manifest.ambient_digest = file_digest(config.ambient_profile);
    return manifest;
}

void save_manifest(const RunManifest& manifest, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["tool_version"] = manifest.tool_version;
    doc["config"] = config_to_json(manifest.config);
    doc["digests"] = {{"feeder", manifest.feeder_digest},
                      {"inventory", manifest.inventory_digest},
                      {"baseline_p", manifest.baseline_p_digest},
                      {"baseline_q", manifest.baseline_q_digest},
                      {"availability", manifest.availability_digest},
                      {"ambient", manifest.ambient_digest}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << doc.dump(2) << "\n";
}

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest " + path.string() + ": " + e.what());
    }
    RunManifest manifest;
    try {
        manifest.tool_version = doc.value("tool_version", std::string("unknown"));
        manifest.config = config_from_json(doc.at("config"), path.parent_path());
        const auto& digests = doc.at("digests");
        manifest.feeder_digest = digests.value("feeder", 0ull);
        manifest.inventory_digest = digests.value("inventory", 0ull);
        manifest.baseline_p_digest = digests.value("baseline_p", 0ull);
        manifest.baseline_q_digest = digests.value("baseline_q", 0ull);
        manifest.availability_digest = digests.value("availability", 0ull);
        manifest.ambient_digest = digests.value("ambient", 0ull);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("manifest " + path.string() + ": " + e.what());
    }
    return manifest;
}

void verify_manifest(const RunManifest& manifest) {
    const RunManifest fresh = make_manifest(manifest.config);
    auto check = [](const char* what, std::uint64_t recorded, std::uint64_t current) {
        if (recorded != current)
            throw ConfigError(std::string("manifest digest mismatch for ") + what +
                              "; the input file changed since the manifest was written");
    };
    check("feeder", manifest.feeder_digest, fresh.feeder_digest);
    check("inventory", manifest.inventory_digest, fresh.inventory_digest);
    check("baseline_p", manifest.baseline_p_digest, fresh.baseline_p_digest);
    check("baseline_q", manifest.baseline_q_digest, fresh.baseline_q_digest);
    check("availability", manifest.availability_digest, fresh.availability_digest);
    check("ambient", manifest.ambient_digest, fresh.ambient_digest);
}

}  // namespace vreg
