#include "vreg/scenario.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "vreg/errors.hpp"

using namespace vreg;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory under the system temp root, cleaned on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("vreg-test-" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

const CustomerSpec& customer_at(const SystemInstance& instance, int node) {
    for (const auto& customer : instance.customers)
        if (customer.node == node) return customer;
    throw std::logic_error("no customer at node " + std::to_string(node));
}

}  // namespace

TEST_CASE("preset catalogue is closed under lookup") {
    for (const std::string& name : preset_names()) {
        CHECK(is_preset(name));
        CHECK_NOTHROW(load_scenario(name));
    }
    CHECK_FALSE(is_preset("nope"));
    CHECK_THROWS_AS(load_scenario("nope"), ConfigError);
}

TEST_CASE("urban feeder preset matches its published inventory") {
    const ResolvedScenario resolved = resolve_instance(load_scenario("ieee37-s2"));
    const SystemInstance& instance = resolved.instance;

    CHECK(instance.topology.node_count == 37);
    CHECK(instance.topology.v0 == 1.0);
    CHECK(instance.topology.power_base_kva == 1000.0);

    // 18 inverters; unit 3 (node 10) rated 300 kVA, units 15-16 (nodes
    // 33, 34) rated 350 kVA, the rest 200 kVA.
    const int pv_nodes[] = {4, 7, 10, 13, 17, 20, 22, 23, 26,
                            28, 29, 30, 31, 32, 33, 34, 35, 36};
    int pv_count = 0;
    for (const auto& customer : instance.customers) pv_count += static_cast<int>(customer.pvs.size());
    CHECK(pv_count == 18);
    for (int node : pv_nodes) {
        const CustomerSpec& customer = customer_at(instance, node);
        REQUIRE(customer.pvs.size() == 1);
        const PvSpec& pv = customer.pvs[0];
        double expected_eta = 0.2;
        if (node == 10) expected_eta = 0.3;
        if (node == 33 || node == 34) expected_eta = 0.35;
        CHECK(pv.eta_pu == doctest::Approx(expected_eta));
        CHECK(pv.cost_p == 3.0);
        CHECK(pv.cost_q == 1.0);
        // Noon operating point: 85% of nameplate is available.
        CHECK(pv.p_av_pu == doctest::Approx(0.85 * expected_eta));
    }

    // 25 thermal nodes, 15 independently dispatched 4 kW units each.
    const int tcl_nodes[] = {2,  5,  6,  7,  9,  10, 11, 13, 14, 16, 18, 19, 20,
                             21, 22, 24, 26, 27, 28, 29, 30, 32, 33, 35, 36};
    int tcl_node_count = 0;
    for (const auto& customer : instance.customers)
        if (!customer.tcls.empty()) ++tcl_node_count;
    CHECK(tcl_node_count == 25);
    for (int node : tcl_nodes) {
        const CustomerSpec& customer = customer_at(instance, node);
        REQUIRE(customer.tcls.size() == 15);
        for (const TclSpec& tcl : customer.tcls) {
            CHECK(tcl.rates.rates_w == std::vector<double>{0.0, 4000.0});
            CHECK(tcl.t_min_f == 70.0);
            CHECK(tcl.t_max_f == 80.0);
            CHECK(tcl.t_nom_f == 75.0);
            CHECK(tcl.cost_t == 20.0);
            CHECK(tcl.theta2_f_per_w == doctest::Approx(-0.001));
        }
    }

    // Limits 0.95/1.05 with a 0.01 margin tighten the model band to
    // 0.96/1.04 while the originals stay on record for reporting.
    CHECK(instance.v_lower_orig(0) == doctest::Approx(0.95));
    CHECK(instance.v_upper_orig(0) == doctest::Approx(1.05));
    CHECK(instance.model.v_lower(0) == doctest::Approx(0.96));
    CHECK(instance.model.v_upper(0) == doctest::Approx(1.04));
    CHECK(instance.robust_margin == doctest::Approx(0.01));

    // Noon is the peak-availability row the default timestep resolves to.
    CHECK(resolved.timestep == 12);
}

TEST_CASE("thermal dispatch variants share totals but differ in granularity") {
    const SystemInstance s1 = resolve_instance(load_scenario("ieee37-s1")).instance;
    const SystemInstance s2 = resolve_instance(load_scenario("ieee37-s2")).instance;
    const SystemInstance s3 = resolve_instance(load_scenario("ieee37-s3")).instance;

    const CustomerSpec& c1 = customer_at(s1, 2);
    const CustomerSpec& c2 = customer_at(s2, 2);
    const CustomerSpec& c3 = customer_at(s3, 2);

    // All-or-nothing aggregate: one device switching the whole 60 kW block.
    REQUIRE(c1.tcls.size() == 1);
    CHECK(c1.tcls[0].rates.rates_w == std::vector<double>{0.0, 60000.0});
    CHECK(c1.tcls[0].theta2_f_per_w == doctest::Approx(-0.001 / 15.0));
    CHECK(c1.tcls[0].cost_t == doctest::Approx(300.0));

    // 4 kW-granular aggregate: 16 rates spanning the same 60 kW.
    REQUIRE(c3.tcls.size() == 1);
    REQUIRE(c3.tcls[0].rates.rates_w.size() == 16);
    CHECK(c3.tcls[0].rates.rates_w.front() == 0.0);
    CHECK(c3.tcls[0].rates.rates_w.back() == 60000.0);
    CHECK(c3.tcls[0].rates.rates_w[1] == 4000.0);

    // Aggregation preserves the relaxed optimum: the aggregate's best
    // response equals the summed per-unit responses at any price.
    for (double alpha : {0.0, -0.5, 0.4}) {
        const double per_unit = tcl_relaxed_best_response(c2.tcls[0], alpha);
        CHECK(tcl_relaxed_best_response(c1.tcls[0], alpha) ==
              doctest::Approx(15.0 * per_unit).epsilon(1e-9));
        CHECK(tcl_relaxed_best_response(c3.tcls[0], alpha) ==
              doctest::Approx(15.0 * per_unit).epsilon(1e-9));
    }

    // Ambient profile rewrites the outdoor temperature at resolution.
    CHECK(c2.tcls[0].t_out_f == doctest::Approx(90.0 + 10.0 * std::exp(-0.16)));
}

TEST_CASE("config validation rejects inconsistent knob settings") {
    ScenarioConfig config = load_scenario("toy2");
    CHECK_NOTHROW(config.validate());

    ScenarioConfig bad = config;
    bad.preset = "mystery";
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.slow_ratio = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.iterations = 5;
    bad.slow_ratio = 10;  // budget smaller than one slow frame
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.v_lower = 1.05;
    bad.v_upper = 1.05;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.robust_margin = -0.01;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.robust_margin = 0.06;  // swallows the whole 0.95..1.05 band
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = config;
    bad.preset = "custom";  // custom without a feeder file
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("overrides replace only the fields they set") {
    ScenarioOverrides overrides;
    overrides.iterations = 123;
    overrides.stepsize_mode = "diminishing";
    overrides.v_upper = 1.08;
    overrides.voltage_mode = "ac";
    overrides.seed = 77;

    const ScenarioConfig config = load_scenario("ieee37-s1", overrides);
    CHECK(config.iterations == 123);
    CHECK(config.schedule.mode == StepsizeMode::kDiminishing);
    CHECK(config.v_upper == 1.08);
    CHECK(config.voltage_mode == VoltageMode::kNonlinearSweep);
    CHECK(config.seed == 77);
    // Untouched fields keep the preset values.
    CHECK(config.slow_ratio == 60);
    CHECK(config.robust_margin == 0.01);

    ScenarioOverrides bad;
    bad.stepsize_mode = "random";
    CHECK_THROWS_AS(load_scenario("toy1", bad), ConfigError);
    bad = {};
    bad.voltage_mode = "dc";
    CHECK_THROWS_AS(load_scenario("toy1", bad), ConfigError);
}

TEST_CASE("profile ingestion parses, defaults, and rejects with line numbers") {
    TempDir dir("profiles");
    std::vector<std::string> warnings;

    SUBCASE("well-formed file with header") {
        write_file(dir.path / "p.csv",
                   "timestep,node,value_kw\n"
                   "0,1,-10\n"
                   "0,2,-20\n"
                   "1,1,-12\n");
        const ProfileSeries series =
            ingest_profile_csv(dir.path / "p.csv", 2, "kw", 0.0, true, warnings);
        REQUIRE(series.timesteps() == 2);
        CHECK(series.values[0](0) == -10.0);
        CHECK(series.values[0](1) == -20.0);
        CHECK(series.values[1](0) == -12.0);
        CHECK(series.values[1](1) == 0.0);  // unlisted cell takes the default
        CHECK(warnings.empty());

        // Clamped lookups: before the first row and past the last row.
        CHECK(series.at(-5, 1, 99.0) == -10.0);
        CHECK(series.at(7, 1, 99.0) == -12.0);
        ProfileSeries empty;
        CHECK(empty.at(0, 1, 99.0) == 99.0);
    }

    SUBCASE("unit mismatch in the header") {
        write_file(dir.path / "p.csv", "timestep,node,value_kvar\n0,1,-10\n");
        CHECK_THROWS_AS(ingest_profile_csv(dir.path / "p.csv", 2, "kw", 0.0, true, warnings),
                        IngestError);
    }

    SUBCASE("malformed rows carry their line number") {
        write_file(dir.path / "p.csv", "timestep,node,value_kw\n0,1,-10\n0,oops,-3\n");
        try {
            ingest_profile_csv(dir.path / "p.csv", 2, "kw", 0.0, true, warnings);
            FAIL("expected IngestError");
        } catch (const IngestError& e) {
            CHECK(std::string(e.what()).find(":3:") != std::string::npos);
        }
        write_file(dir.path / "q.csv", "0,1\n");
        CHECK_THROWS_AS(ingest_profile_csv(dir.path / "q.csv", 2, "kw", 0.0, true, warnings),
                        IngestError);
        write_file(dir.path / "r.csv", "0,5,-10\n");  // node beyond the feeder
        CHECK_THROWS_AS(ingest_profile_csv(dir.path / "r.csv", 2, "kw", 0.0, true, warnings),
                        IngestError);
    }

    SUBCASE("nodes that never appear are warned about") {
        write_file(dir.path / "p.csv", "timestep,node,value_kw\n0,1,-10\n");
        const ProfileSeries series =
            ingest_profile_csv(dir.path / "p.csv", 3, "kw", -5.0, true, warnings);
        CHECK(series.values[0](1) == -5.0);
        REQUIRE(warnings.size() == 1);
        CHECK(warnings[0].find("2, 3") != std::string::npos);
    }

    SUBCASE("missing file") {
        CHECK_THROWS_AS(ingest_profile_csv(dir.path / "absent.csv", 2, "kw", 0.0, true, warnings),
                        IngestError);
    }
}

TEST_CASE("profile export round-trips through ingestion") {
    TempDir dir("roundtrip");
    ProfileSeries series;
    series.values.push_back((Eigen::VectorXd(3) << -1.25, 0.0, 4.5).finished());
    series.values.push_back((Eigen::VectorXd(3) << -2.5, 1e-7, 0.125).finished());
    export_profile_csv(series, "kw", dir.path / "series.csv");

    std::vector<std::string> warnings;
    const ProfileSeries back =
        ingest_profile_csv(dir.path / "series.csv", 3, "kw", 0.0, true, warnings);
    REQUIRE(back.timesteps() == 2);
    for (long t = 0; t < 2; ++t)
        for (int node = 1; node <= 3; ++node)
            CHECK(back.values[t](node - 1) == series.values[t](node - 1));
}

TEST_CASE("inventory files round-trip their physical units") {
    TempDir dir("inventory");
    const SystemInstance source = resolve_instance(load_scenario("ieee37-s3")).instance;
    const FeederTopology& topology = source.topology;
    // The file stores devices, so only customers that own any survive.
    std::vector<CustomerSpec> customers;
    for (const CustomerSpec& customer : source.customers)
        if (customer.participating()) customers.push_back(customer);

    save_inventory(source.customers, topology, dir.path / "inventory.json");
    const auto loaded = load_inventory(dir.path / "inventory.json", topology);

    REQUIRE(loaded.size() == customers.size());
    for (std::size_t i = 0; i < customers.size(); ++i) {
        CHECK(loaded[i].node == customers[i].node);
        REQUIRE(loaded[i].pvs.size() == customers[i].pvs.size());
        for (std::size_t j = 0; j < customers[i].pvs.size(); ++j) {
            CHECK(loaded[i].pvs[j].eta_pu == doctest::Approx(customers[i].pvs[j].eta_pu));
            CHECK(loaded[i].pvs[j].p_av_pu == doctest::Approx(customers[i].pvs[j].p_av_pu));
            CHECK(loaded[i].pvs[j].cost_p == customers[i].pvs[j].cost_p);
        }
        REQUIRE(loaded[i].tcls.size() == customers[i].tcls.size());
        for (std::size_t j = 0; j < customers[i].tcls.size(); ++j) {
            const TclSpec& a = loaded[i].tcls[j];
            const TclSpec& b = customers[i].tcls[j];
            CHECK(a.theta2_f_per_w == doctest::Approx(b.theta2_f_per_w));
            CHECK(a.cost_t == doctest::Approx(b.cost_t));
            CHECK(a.rates.rates_w.size() == b.rates.rates_w.size());
            for (std::size_t r = 0; r < b.rates.rates_w.size(); ++r)
                CHECK(a.rates.rates_w[r] == doctest::Approx(b.rates.rates_w[r]));
        }
    }
}

TEST_CASE("dumped preset reloads as an identical custom scenario") {
    TempDir dir("dump");
    dump_preset("toy2", dir.path);
    CHECK(fs::exists(dir.path / "scenario.json"));
    CHECK(fs::exists(dir.path / "feeder.json"));
    CHECK(fs::exists(dir.path / "inventory.json"));

    const ResolvedScenario preset = resolve_instance(load_scenario("toy2"));
    const ResolvedScenario custom =
        resolve_instance(load_scenario((dir.path / "scenario.json").string()));

    CHECK(custom.config.preset == "custom");
    CHECK(custom.instance.model.R.isApprox(preset.instance.model.R, 1e-12));
    CHECK(custom.instance.model.v_upper.isApprox(preset.instance.model.v_upper, 1e-12));
    CHECK(custom.instance.baseline_p.isApprox(preset.instance.baseline_p, 1e-12));
    REQUIRE(custom.instance.customers.size() == preset.instance.customers.size());
    for (std::size_t i = 0; i < preset.instance.customers.size(); ++i) {
        const CustomerSpec& a = custom.instance.customers[i];
        const CustomerSpec& b = preset.instance.customers[i];
        CHECK(a.node == b.node);
        REQUIRE(a.pvs.size() == b.pvs.size());
        for (std::size_t j = 0; j < b.pvs.size(); ++j) {
            CHECK(a.pvs[j].p_av_pu == doctest::Approx(b.pvs[j].p_av_pu).epsilon(1e-12));
            CHECK(a.pvs[j].eta_pu == doctest::Approx(b.pvs[j].eta_pu).epsilon(1e-12));
        }
    }
}

TEST_CASE("run parameters mirror the scenario knobs") {
    ScenarioConfig config = load_scenario("ieee37-s1");
    config.stop_when_sampled = true;
    const RunParams params = run_params(config, /*keep_trace=*/false);
    CHECK(params.iterations == config.iterations);
    CHECK(params.slow_ratio == 60);
    CHECK(params.schedule.slow_frame == 60);
    CHECK(params.seed == config.seed);
    CHECK(params.stop_after_post_samples == config.post_samples);
    CHECK_FALSE(params.keep_trace);

    config.stop_when_sampled = false;
    CHECK(run_params(config, true).stop_after_post_samples == 0);
    CHECK(run_params(config, true).keep_trace);
}

TEST_CASE("manifests pin the inputs and notice drift") {
    TempDir dir("manifest");
    dump_preset("toy2", dir.path);
    const ScenarioConfig config = load_scenario((dir.path / "scenario.json").string());

    const RunManifest manifest = make_manifest(config);
    CHECK(manifest.feeder_digest != 0);
    CHECK(manifest.inventory_digest != 0);
    save_manifest(manifest, dir.path / "manifest.json");

    const RunManifest loaded = load_manifest(dir.path / "manifest.json");
    CHECK(loaded.tool_version == manifest.tool_version);
    CHECK(loaded.config.preset == "custom");
    CHECK(loaded.config.iterations == config.iterations);
    CHECK(loaded.feeder_digest == manifest.feeder_digest);
    CHECK(loaded.inventory_digest == manifest.inventory_digest);
    CHECK_NOTHROW(verify_manifest(loaded));

    // Any edit to a pinned input must be caught.
    std::ofstream append(dir.path / "feeder.json", std::ios::app);
    append << "\n";
    append.close();
    CHECK_THROWS_AS(verify_manifest(loaded), ConfigError);

    CHECK_THROWS_AS(load_manifest(dir.path / "absent.json"), IoError);
}

TEST_CASE("scenario files resolve relative paths against their directory") {
    TempDir dir("relpaths");
    fs::create_directories(dir.path / "nested");
    dump_preset("toy2", dir.path / "nested");

    // Loading through a path with a parent directory must still find the
    // feeder/inventory files referenced relatively inside the JSON.
    const ScenarioConfig config =
        load_scenario((dir.path / "nested" / "scenario.json").string());
    CHECK(fs::exists(config.feeder_file));
    CHECK(fs::exists(config.inventory_file));
    CHECK_NOTHROW(resolve_instance(config));
}
