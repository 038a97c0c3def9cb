#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vreg/sim.hpp"

namespace vreg {

inline constexpr const char* kToolVersion = "voltreg 0.1.0";

/// A run, fully described: where the inputs come from (preset name or
/// files) and every numeric knob. This is what a manifest pins down.
struct ScenarioConfig {
    std::string preset = "custom";  // toy1 | toy2 | var10 | ieee37-s1/s2/s3 | custom
    std::filesystem::path feeder_file;
    std::filesystem::path inventory_file;
    std::filesystem::path baseline_p_profile;
    std::filesystem::path baseline_q_profile;
    std::filesystem::path availability_profile;
    std::filesystem::path ambient_profile;
    long timestep = -1;  // profile row to operate at; -1 = peak total availability
    long iterations = 20000;
    int slow_ratio = 1;
    StepsizeSchedule schedule;
    double v_lower = 0.95;
    double v_upper = 1.05;
    double robust_margin = 0.0;
    std::uint64_t seed = 1;
    VoltageMode voltage_mode = VoltageMode::kLinear;
    long post_samples = 25000;       // post-convergence sampling target
    bool stop_when_sampled = false;  // end once the target is collected
    int threads = 1;

    void validate() const;
};

/// Command-line style overrides applied on top of a preset or scenario
/// file; unset fields keep the loaded value.
struct ScenarioOverrides {
    std::optional<long> iterations;
    std::optional<int> slow_ratio;
    std::optional<std::string> stepsize_mode;  // "constant" | "diminishing"
    std::optional<double> stepsize;
    std::optional<double> v_lower;
    std::optional<double> v_upper;
    std::optional<double> robust_margin;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> voltage_mode;  // "linear" | "ac"
    std::optional<long> timestep;
    std::optional<long> post_samples;
    std::optional<bool> stop_when_sampled;
    std::optional<int> threads;
};

std::vector<std::string> preset_names();
bool is_preset(const std::string& name);

/// Resolves a preset name or a scenario JSON file into a validated config,
/// then applies the overrides. Relative paths inside a scenario file are
/// taken against the file's directory.
ScenarioConfig load_scenario(const std::string& preset_or_path,
                             const ScenarioOverrides& overrides = {});

/// Dense per-node time series; empty means "use the fallback everywhere".
struct ProfileSeries {
    std::vector<Eigen::VectorXd> values;  // values[t](node-1)

    long timesteps() const { return static_cast<long>(values.size()); }
    /// Value at (t, node), clamping t into range; fallback when empty.
    double at(long t, int node, double fallback) const;
};

struct ProfileBundle {
    ProfileSeries baseline_p_kw;    // net baseline injection (loads negative)
    ProfileSeries baseline_q_kvar;
    ProfileSeries availability_kw;  // total available PV power per node
    ProfileSeries ambient_f;        // outdoor temperature
    std::vector<std::string> warnings;
};

/// Reads one (timestep, node, value) CSV. The optional header's value
/// column must carry the expected unit suffix (e.g. value_kw). With
/// warn_missing set, nodes that never appear are reported as defaulted.
ProfileSeries ingest_profile_csv(const std::filesystem::path& path, int load_nodes,
                                 const std::string& expected_unit, double default_value,
                                 bool warn_missing, std::vector<std::string>& warnings);

/// All profiles referenced by the config; files left unset come back empty.
ProfileBundle ingest_profiles(const ScenarioConfig& config, int load_nodes);

void export_profile_csv(const ProfileSeries& series, const std::string& unit,
                        const std::filesystem::path& path);

/// Device inventory JSON: physical units (kW, kVA, degrees F), converted to
/// per-unit on the feeder's power base.
std::vector<CustomerSpec> load_inventory(const std::filesystem::path& path,
                                         const FeederTopology& topology);
void save_inventory(const std::vector<CustomerSpec>& customers, const FeederTopology& topology,
                    const std::filesystem::path& path);

struct ResolvedScenario {
    ScenarioConfig config;
    SystemInstance instance;
    long timestep = 0;  // the profile row actually used
    std::vector<std::string> warnings;
};

/// Files/presets + profiles -> numeric SystemInstance at one operating
/// point (robust margin already folded into the model limits).
ResolvedScenario resolve_instance(const ScenarioConfig& config);

RunParams run_params(const ScenarioConfig& config, bool keep_trace);

/// Writes a preset's fixture files (feeder, inventory, profiles, scenario
/// description) so it can be rerun or edited as a custom scenario.
void dump_preset(const std::string& name, const std::filesystem::path& dir);

/// Pins a run: the resolved config plus digests of every referenced input
/// file, recorded before the run starts. Re-running a manifest against
/// unchanged inputs reproduces the trace byte for byte.
struct RunManifest {
    std::string tool_version = kToolVersion;
    ScenarioConfig config;
    std::uint64_t feeder_digest = 0;
    std::uint64_t inventory_digest = 0;
    std::uint64_t baseline_p_digest = 0;
    std::uint64_t baseline_q_digest = 0;
    std::uint64_t availability_digest = 0;
    std::uint64_t ambient_digest = 0;
};

RunManifest make_manifest(const ScenarioConfig& config);
void save_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest load_manifest(const std::filesystem::path& path);
/// Recomputes the input digests; ConfigError when any input drifted.
void verify_manifest(const RunManifest& manifest);

}  // namespace vreg
