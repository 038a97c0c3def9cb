#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

namespace vreg {

struct Line {
    int from = 0;
    int to = 0;
    double r = 0.0;  // series resistance, per-unit
    double x = 0.0;  // series reactance, per-unit
};

/// Radial feeder: substation at node 0 plus N load nodes. Line impedances
/// are stored per-unit on power_base_kva.
struct FeederTopology {
    std::string name;
    int node_count = 0;  // N + 1, including the substation
    std::vector<Line> lines;
    double v0 = 1.0;                 // substation voltage magnitude, pu
    double power_base_kva = 1000.0;  // conversion base for device ratings

    int load_nodes() const { return node_count - 1; }
};

/// Parent/child bookkeeping of the validated tree, in breadth-first order
/// from the substation. parent_line[i] indexes lines for node i >= 1.
struct TreeIndex {
    std::vector<int> parent;
    std::vector<int> parent_line;
    std::vector<int> bfs_order;  // node ids, substation first
};

/// Checks the tree invariants (N lines, connected, acyclic, sane
/// parameters) and returns the traversal index. Throws TopologyError or
/// ConfigError.
TreeIndex validate_topology(const FeederTopology& topology);

/// v ~ v_hat = R p + X q + a, with R/X formed from common-path impedance
/// sums divided by v0 and a = v0 * 1. Voltage limits ride along so the
/// constraint residual has everything it needs.
struct LinearGridModel {
    Eigen::MatrixXd R;
    Eigen::MatrixXd X;
    Eigen::VectorXd a;
    Eigen::VectorXd v_lower;
    Eigen::VectorXd v_upper;

    int nodes() const { return static_cast<int>(a.size()); }
};

/// Net injections and the voltage they induce; v_hat is recomputed from
/// (p, q) at construction, never cached from elsewhere.
struct NetworkState {
    Eigen::VectorXd p;
    Eigen::VectorXd q;
    Eigen::VectorXd v_hat;
};

LinearGridModel build_linear_model(const FeederTopology& topology,
                                   const Eigen::VectorXd& v_lower,
                                   const Eigen::VectorXd& v_upper);
LinearGridModel build_linear_model(const FeederTopology& topology, double v_lower, double v_upper);

Eigen::VectorXd linear_voltage(const LinearGridModel& model, const Eigen::VectorXd& p,
                               const Eigen::VectorXd& q);

NetworkState make_network_state(const LinearGridModel& model, const Eigen::VectorXd& p,
                                const Eigen::VectorXd& q);

/// Nonlinear validation oracle: backward/forward sweep on the radial
/// feeder. Returns voltage magnitudes at the N load nodes. Throws
/// DivergenceError if successive voltage iterates do not settle below
/// tolerance within max_iterations.
Eigen::VectorXd ac_power_flow(const FeederTopology& topology, const Eigen::VectorXd& p,
                              const Eigen::VectorXd& q, double tolerance = 1e-8,
                              int max_iterations = 1000);

/// g(z) = [v_lower - v_hat; v_hat - v_upper]; positive entries are limit
/// violations.
Eigen::VectorXd constraint_residual(const LinearGridModel& model, const Eigen::VectorXd& v_hat);

FeederTopology load_feeder(const std::filesystem::path& path);
void save_feeder(const FeederTopology& topology, const std::filesystem::path& path);

/// Writes R.csv, X.csv and a.csv under dir for inspection.
void export_linear_model_csv(const LinearGridModel& model, const std::filesystem::path& dir);

}  // namespace vreg
