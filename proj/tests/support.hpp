#pragma once

// Shared fixtures for the test binaries: random radial feeders, random
// device populations, and small hand-checkable instances. Everything here
// is deliberately independent of the library's own construction paths so
// tests can act as oracles (e.g. sensitivities via explicit path walks).

#include <algorithm>
#include <random>
#include <utility>
#include <vector>

#include "vreg/devices.hpp"
#include "vreg/feeder.hpp"
#include "vreg/sim.hpp"

namespace vreg::testing {

inline FeederTopology random_radial_topology(std::mt19937_64& rng, int load_nodes,
                                             double r_lo = 0.005, double r_hi = 0.02) {
    std::uniform_real_distribution<double> impedance(r_lo, r_hi);
    FeederTopology topology;
    topology.name = "random";
    topology.node_count = load_nodes + 1;
    topology.v0 = 1.0;
    topology.power_base_kva = 1000.0;
    for (int node = 1; node <= load_nodes; ++node) {
        std::uniform_int_distribution<int> pick_parent(0, node - 1);
        topology.lines.push_back(
            Line{pick_parent(rng), node, impedance(rng), impedance(rng)});
    }
    return topology;
}

/// Sensitivity oracle: entry (i, j) is the summed per-phase resistance (or
/// reactance) of the line segments shared by the root paths of i and j,
/// divided by the substation voltage. Walks parents explicitly.
inline Eigen::MatrixXd path_overlap_matrix(const FeederTopology& topology, bool reactance) {
    std::vector<int> parent(topology.node_count, -1);
    std::vector<double> weight(topology.node_count, 0.0);
    for (const Line& line : topology.lines) {
        parent[line.to] = line.from;
        weight[line.to] = reactance ? line.x : line.r;
    }
    const auto root_path = [&](int node) {
        std::vector<int> edges;  // identified by their downstream node
        for (int u = node; u != 0; u = parent[u]) edges.push_back(u);
        return edges;
    };
    const int n = topology.load_nodes();
    Eigen::MatrixXd overlap(n, n);
    for (int i = 1; i <= n; ++i) {
        const std::vector<int> pi = root_path(i);
        for (int j = 1; j <= n; ++j) {
            const std::vector<int> pj = root_path(j);
            double sum = 0.0;
            for (int e : pi)
                if (std::find(pj.begin(), pj.end(), e) != pj.end()) sum += weight[e];
            overlap(i - 1, j - 1) = sum / topology.v0;
        }
    }
    return overlap;
}

/// Exact two-bus magnitude: one line (r, x) from the source at v0 feeding a
/// single node injecting (p, q). Solves the closed-form quadratic in |V|^2.
inline double two_bus_voltage(double v0, double r, double x, double p, double q) {
    const double b = v0 * v0 + 2.0 * (r * p + x * q);
    const double z2 = (r * r + x * x) * (p * p + q * q);
    const double disc = b * b - 4.0 * z2;
    return std::sqrt((b + std::sqrt(disc)) / 2.0);
}

inline TclSpec random_tcl(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    TclSpec tcl;
    tcl.t_in_f = 74.0 + 4.0 * u01(rng);
    tcl.t_out_f = 86.0 + 8.0 * u01(rng);
    tcl.theta1 = 0.08 + 0.04 * u01(rng);
    tcl.theta2_f_per_w = -(0.0008 + 0.0004 * u01(rng));
    tcl.t_min_f = 70.0;
    tcl.t_max_f = 80.0;
    tcl.t_nom_f = 74.0 + 2.0 * u01(rng);
    tcl.cost_t = 10.0 + 20.0 * u01(rng);
    const int rate_count = 3 + static_cast<int>(u01(rng) * 4.0);
    tcl.rates = uniform_rate_grid(500.0 + 1500.0 * u01(rng), rate_count);
    return tcl;
}

inline PvSpec random_pv(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    PvSpec pv;
    pv.eta_pu = 0.05 + 0.25 * u01(rng);
    pv.p_av_pu = pv.eta_pu * (0.5 + 0.5 * u01(rng));
    pv.cost_p = 0.5 + 3.0 * u01(rng);
    pv.cost_q = 0.2 + 1.5 * u01(rng);
    return pv;
}

/// Random mixed-device instance with limits built around a strictly
/// feasible interior point, so strong duality is available by design.
inline SystemInstance random_slater_instance(std::mt19937_64& rng, int load_nodes) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SystemInstance instance;
    instance.topology = random_radial_topology(rng, load_nodes);
    const int n = load_nodes;

    instance.baseline_p = Eigen::VectorXd::Zero(n);
    instance.baseline_q = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) {
        instance.baseline_p(i) = -0.05 * u01(rng);
        instance.baseline_q(i) = -0.02 * u01(rng);
    }

    Eigen::VectorXd interior_p = instance.baseline_p;
    Eigen::VectorXd interior_q = instance.baseline_q;
    for (int node = 1; node <= n; ++node) {
        CustomerSpec customer;
        customer.node = node;
        if (u01(rng) < 0.8) customer.pvs.push_back(random_pv(rng));
        if (u01(rng) < 0.6) customer.tcls.push_back(random_tcl(rng));
        for (const PvSpec& pv : customer.pvs)
            interior_p(node - 1) += 0.5 * pv.p_av_pu;  // half output: interior of the box
        for (const TclSpec& tcl : customer.tcls) {
            const ConsumptionInterval hull = tcl_hull(tcl);
            const double mid_kw = 0.5 * (hull.lo_w + hull.hi_w) / 1000.0;
            interior_p(node - 1) -= mid_kw / instance.topology.power_base_kva;
        }
        instance.customers.push_back(std::move(customer));
    }

    const LinearGridModel probe = build_linear_model(instance.topology, 0.0, 2.0);
    const Eigen::VectorXd v_interior = linear_voltage(probe, interior_p, interior_q);
    // Limits strictly containing the interior point, tight enough that the
    // upper side often binds at the optimum.
    instance.v_lower_orig = v_interior.array() - (0.02 + 0.03 * u01(rng));
    instance.v_upper_orig = v_interior.array() + 0.004 + 0.012 * u01(rng);
    instance.robust_margin = 0.0;
    instance.model =
        build_linear_model(instance.topology, instance.v_lower_orig, instance.v_upper_orig);
    instance.validate();
    return instance;
}

}  // namespace vreg::testing
