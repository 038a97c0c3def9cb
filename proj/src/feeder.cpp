#include "vreg/feeder.hpp"

#include <cmath>
#include <complex>
#include <fstream>
#include <queue>
#include <sstream>

#include "json.hpp"
#include "vreg/csv.hpp"
#include "vreg/errors.hpp"

namespace vreg {

TreeIndex validate_topology(const FeederTopology& topology) {
    const int n = topology.node_count;
    if (n < 2) throw ConfigError("feeder needs the substation plus at least one load node");
    if (!(topology.v0 > 0.0)) throw ConfigError("substation voltage v0 must be positive");
    if (!(topology.power_base_kva > 0.0)) throw ConfigError("power base must be positive");
    if (static_cast<int>(topology.lines.size()) != n - 1)
        throw TopologyError("radial feeder with " + std::to_string(n) + " nodes needs exactly " +
                            std::to_string(n - 1) + " lines, got " +
                            std::to_string(topology.lines.size()));

    std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, line index)
    for (int li = 0; li < static_cast<int>(topology.lines.size()); ++li) {
        const Line& ln = topology.lines[li];
        if (ln.from < 0 || ln.from >= n || ln.to < 0 || ln.to >= n)
            throw TopologyError("line endpoint out of range");
        if (ln.from == ln.to) throw TopologyError("self-loop at node " + std::to_string(ln.from));
        if (!(ln.r >= 0.0) || !std::isfinite(ln.r) || !std::isfinite(ln.x))
            throw ConfigError("line impedance must be finite with r >= 0");
        adj[ln.from].push_back({ln.to, li});
        adj[ln.to].push_back({ln.from, li});
    }

    TreeIndex index;
    index.parent.assign(n, -1);
    index.parent_line.assign(n, -1);
    index.bfs_order.reserve(n);
    std::vector<bool> seen(n, false);
    std::queue<int> frontier;
    frontier.push(0);
    seen[0] = true;
    while (!frontier.empty()) {
        const int u = frontier.front();
        frontier.pop();
        index.bfs_order.push_back(u);
        for (auto [v, li] : adj[u]) {
            if (li == index.parent_line[u]) continue;
            if (seen[v]) throw TopologyError("cycle detected through node " + std::to_string(v));
            seen[v] = true;
            index.parent[v] = u;
            index.parent_line[v] = li;
            frontier.push(v);
        }
    }
    if (static_cast<int>(index.bfs_order.size()) != n)
        throw TopologyError("feeder graph is not connected");
    return index;
}

LinearGridModel build_linear_model(const FeederTopology& topology, const Eigen::VectorXd& v_lower,
                                   const Eigen::VectorXd& v_upper) {
    const TreeIndex index = validate_topology(topology);
    const int n_load = topology.load_nodes();
    if (v_lower.size() != n_load || v_upper.size() != n_load)
        throw ShapeError("voltage limit vectors must have one entry per load node");
    if (!((v_lower.array() < v_upper.array()).all()))
        throw ConfigError("lower voltage limits must be strictly below upper limits");

    // A(l, i) = 1 when line l lies on the path substation -> load node i.
    const int n_lines = static_cast<int>(topology.lines.size());
    Eigen::MatrixXd path(n_lines, n_load);
    path.setZero();
    for (int node : index.bfs_order) {
        if (node == 0) continue;
        const int col = node - 1;
        if (index.parent[node] != 0) path.col(col) = path.col(index.parent[node] - 1);
        path(index.parent_line[node], col) = 1.0;
    }

    Eigen::VectorXd r(n_lines), x(n_lines);
    for (int li = 0; li < n_lines; ++li) {
        r(li) = topology.lines[li].r;
        x(li) = topology.lines[li].x;
    }

    LinearGridModel model;
    // Common-path sums: R_ij = (1/v0) * sum of r over path(i) & path(j).
    model.R = path.transpose() * r.asDiagonal() * path / topology.v0;
    model.X = path.transpose() * x.asDiagonal() * path / topology.v0;
    model.a = Eigen::VectorXd::Constant(n_load, topology.v0);
    model.v_lower = v_lower;
    model.v_upper = v_upper;
    return model;
}

LinearGridModel build_linear_model(const FeederTopology& topology, double v_lower, double v_upper) {
    const int n_load = topology.load_nodes();
    return build_linear_model(topology, Eigen::VectorXd::Constant(n_load, v_lower),
                              Eigen::VectorXd::Constant(n_load, v_upper));
}

Eigen::VectorXd linear_voltage(const LinearGridModel& model, const Eigen::VectorXd& p,
                               const Eigen::VectorXd& q) {
    if (p.size() != model.nodes() || q.size() != model.nodes())
        throw ShapeError("injection vectors must have one entry per load node");
    return model.R * p + model.X * q + model.a;
}

NetworkState make_network_state(const LinearGridModel& model, const Eigen::VectorXd& p,
                                const Eigen::VectorXd& q) {
    return NetworkState{p, q, linear_voltage(model, p, q)};
}

Eigen::VectorXd ac_power_flow(const FeederTopology& topology, const Eigen::VectorXd& p,
                              const Eigen::VectorXd& q, double tolerance, int max_iterations) {
    const TreeIndex index = validate_topology(topology);
    const int n = topology.node_count;
    if (p.size() != n - 1 || q.size() != n - 1)
        throw ShapeError("injection vectors must have one entry per load node");
    if (!(tolerance > 0.0)) throw ConfigError("power flow tolerance must be positive");

    using cplx = std::complex<double>;
    std::vector<cplx> voltage(n, cplx(topology.v0, 0.0));
    std::vector<cplx> branch_current(topology.lines.size());
    std::vector<cplx> injection(n, cplx(0.0, 0.0));
    for (int i = 1; i < n; ++i) injection[i] = cplx(p(i - 1), q(i - 1));

    for (int iter = 0; iter < max_iterations; ++iter) {
        // Backward: accumulate branch currents from the leaves toward the
        // substation. Positive branch current flows from parent to child.
        std::fill(branch_current.begin(), branch_current.end(), cplx(0.0, 0.0));
        for (auto it = index.bfs_order.rbegin(); it != index.bfs_order.rend(); ++it) {
            const int node = *it;
            if (node == 0) continue;
            const cplx node_current = std::conj(injection[node] / voltage[node]);
            branch_current[index.parent_line[node]] -= node_current;
            if (index.parent[node] != 0)
                branch_current[index.parent_line[index.parent[node]]] +=
                    branch_current[index.parent_line[node]];
        }
        // Forward: propagate voltage drops from the substation outward.
        double delta = 0.0;
        for (int node : index.bfs_order) {
            if (node == 0) continue;
            const Line& ln = topology.lines[index.parent_line[node]];
            const cplx updated = voltage[index.parent[node]] -
                                 cplx(ln.r, ln.x) * branch_current[index.parent_line[node]];
            delta = std::max(delta, std::abs(updated - voltage[node]));
            voltage[node] = updated;
        }
        if (delta < tolerance) {
            Eigen::VectorXd magnitudes(n - 1);
            for (int i = 1; i < n; ++i) magnitudes(i - 1) = std::abs(voltage[i]);
            return magnitudes;
        }
        if (!std::isfinite(delta))
            throw DivergenceError("power flow sweep produced non-finite voltages");
    }
    throw DivergenceError("power flow sweep did not converge in " +
                          std::to_string(max_iterations) + " iterations");
}

Eigen::VectorXd constraint_residual(const LinearGridModel& model, const Eigen::VectorXd& v_hat) {
    if (v_hat.size() != model.nodes())
        throw ShapeError("voltage vector must have one entry per load node");
    Eigen::VectorXd g(2 * model.nodes());
    g.head(model.nodes()) = model.v_lower - v_hat;
    g.tail(model.nodes()) = v_hat - model.v_upper;
    return g;
}

namespace {

double ohm_base(const FeederTopology& topology, double base_kv) {
    // Z_base = kV^2 / MVA.
    return base_kv * base_kv / (topology.power_base_kva / 1000.0);
}

}  // namespace

FeederTopology load_feeder(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open feeder file " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("feeder file " + path.string() + ": " + e.what());
    }
    FeederTopology topology;
    try {
        topology.name = doc.value("name", path.stem().string());
        topology.node_count = doc.at("nodes").get<int>();
        topology.v0 = doc.at("v0_pu").get<double>();
        topology.power_base_kva = doc.value("power_base_kva", 1000.0);
        const std::string unit = doc.value("impedance_unit", "pu");
        double scale = 1.0;
        if (unit == "ohm") {
            if (!doc.contains("base_kv"))
                throw ConfigError("feeder file with ohm impedances needs base_kv");
            scale = 1.0 / ohm_base(topology, doc.at("base_kv").get<double>());
        } else if (unit != "pu") {
            throw ConfigError("impedance_unit must be 'pu' or 'ohm', got '" + unit + "'");
        }
        for (const auto& jline : doc.at("lines")) {
            Line ln;
            ln.from = jline.at("from").get<int>();
            ln.to = jline.at("to").get<int>();
            ln.r = jline.at("r").get<double>() * scale;
            ln.x = jline.at("x").get<double>() * scale;
            topology.lines.push_back(ln);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("feeder file " + path.string() + ": " + e.what());
    }
    validate_topology(topology);
    return topology;
}

void save_feeder(const FeederTopology& topology, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["name"] = topology.name;
    doc["nodes"] = topology.node_count;
    doc["v0_pu"] = topology.v0;
    doc["power_base_kva"] = topology.power_base_kva;
    doc["impedance_unit"] = "pu";
    nlohmann::json lines = nlohmann::json::array();
    for (const Line& ln : topology.lines)
        lines.push_back({{"from", ln.from}, {"to", ln.to}, {"r", ln.r}, {"x", ln.x}});
    doc["lines"] = lines;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write feeder file " + path.string());
    out << doc.dump(2) << "\n";
}

void export_linear_model_csv(const LinearGridModel& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    auto write_matrix = [&](const char* name, const Eigen::MatrixXd& m) {
        std::ofstream out(dir / name);
        if (!out) throw IoError("cannot write " + (dir / name).string());
        for (int i = 0; i < m.rows(); ++i) {
            for (int j = 0; j < m.cols(); ++j) {
                if (j) out << ',';
                out << format_double(m(i, j));
            }
            out << '\n';
        }
    };
    write_matrix("R.csv", model.R);
    write_matrix("X.csv", model.X);
    std::ofstream out(dir / "a.csv");
    if (!out) throw IoError("cannot write " + (dir / "a.csv").string());
    for (int i = 0; i < model.a.size(); ++i) out << format_double(model.a(i)) << '\n';
}

}  // namespace vreg
