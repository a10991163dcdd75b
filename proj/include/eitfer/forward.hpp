#pragma once
// Shunt-electrode forward model for the adjacent-drive protocol.
//
// Nodes belonging to one electrode are condensed into a single degree of
// freedom (the electrode potential), which enforces equipotential
// electrodes. Off-electrode boundary carries the natural zero-flux
// condition. The constant nullspace is removed by bordering the stiffness
// matrix with one Lagrange multiplier row enforcing sum_i U_i = 0.
//
// Electrode and injection indices are 0-based: injection j drives +1 into
// electrode j and draws it out of electrode (j + 1) % 16.

#include "eitfer/binary_io.hpp"
#include "eitfer/mesh.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace eitfer {

inline constexpr int kMeasurementsPerInjection = 13;
inline constexpr int kDataLength = kElectrodeCount * kMeasurementsPerInjection; // 208

using SparseMatrix = Eigen::SparseMatrix<double>;

class Conductivity {
public:
    explicit Conductivity(Eigen::VectorXd values) : m_values(std::move(values)) {
        for (Eigen::Index k = 0; k < m_values.size(); ++k)
            if (!(m_values[k] > 0) || !std::isfinite(m_values[k]))
                throw InvalidArgument("conductivity of element " + std::to_string(k) +
                                      " must be positive and finite");
    }
    static Conductivity uniform(int elements, double value = 1.0) {
        return Conductivity(Eigen::VectorXd::Constant(elements, value));
    }
    const Eigen::VectorXd &values() const { return m_values; }
    Eigen::Index size() const { return m_values.size(); }

private:
    Eigen::VectorXd m_values;
};

////////////////////////////////////////////////////////////////////////////////
// Measurement protocol
////////////////////////////////////////////////////////////////////////////////
struct MeasurementPair {
    int injection; // j
    int electrode; // i: voltage U_i - U_{i+1}
};

// Row r of a data vector holds injection r / 13 measured on the pair that
// starts 2 + r % 13 electrodes further round.
inline MeasurementPair measurement_pair(int row) {
    const int j = row / kMeasurementsPerInjection;
    return {j, (j + 2 + row % kMeasurementsPerInjection) % kElectrodeCount};
}

// Row of (j, i), or -1 for the three discarded pairs i = j-1, j, j+1.
inline int measurement_row(int injection, int electrode) {
    const int d = ((electrode - injection) % kElectrodeCount + kElectrodeCount) % kElectrodeCount;
    if (d < 2 || d > 14) return -1;
    return injection * kMeasurementsPerInjection + (d - 2);
}

class DataVector {
public:
    DataVector() : m_values(Eigen::VectorXd::Zero(kDataLength)) {}
    explicit DataVector(Eigen::VectorXd values) : m_values(std::move(values)) {
        if (m_values.size() != kDataLength)
            throw InvalidArgument("data vector must have 208 entries, got " + std::to_string(m_values.size()));
    }
    const Eigen::VectorXd &values() const { return m_values; }
    double operator[](int r) const { return m_values[r]; }
    double &operator[](int r) { return m_values[r]; }
    double norm() const { return m_values.norm(); }

    friend DataVector operator-(const DataVector &a, const DataVector &b) {
        return DataVector(a.m_values - b.m_values);
    }
    friend DataVector operator+(const DataVector &a, const DataVector &b) {
        return DataVector(a.m_values + b.m_values);
    }
    friend DataVector operator*(double s, const DataVector &a) { return DataVector(s * a.m_values); }
    friend bool operator==(const DataVector &a, const DataVector &b) { return a.m_values == b.m_values; }

private:
    Eigen::VectorXd m_values;
};

// Binary cache: "EITV1", u32 count (= 208), 208 little-endian f64.
inline std::string encode_data_vector(const DataVector &v) {
    std::string out = "EITV1";
    binary::put(out, static_cast<std::uint32_t>(kDataLength));
    for (int r = 0; r < kDataLength; ++r) binary::put(out, v[r]);
    return out;
}

inline DataVector decode_data_vector(std::string_view bytes) {
    binary::Reader in(bytes);
    if (in.take(5) != "EITV1") throw IoError("not a data vector file (bad magic)");
    if (in.get<std::uint32_t>() != kDataLength) throw IoError("data vector file must hold 208 entries");
    DataVector v;
    for (int r = 0; r < kDataLength; ++r) v[r] = in.get<double>();
    if (in.remaining() != 0) throw IoError("trailing bytes after data vector");
    return v;
}

// Potentials for all 16 injections.
struct PotentialSet {
    Eigen::MatrixXd node_potentials;      // n_nodes x 16, column j = u_j
    Eigen::MatrixXd electrode_potentials; // 16 x 16, (i, j) = U_i^j
};

struct InjectionSolution {
    Eigen::VectorXd node_potentials;
    std::array<double, kElectrodeCount> electrode_potentials{};
};

////////////////////////////////////////////////////////////////////////////////
// CondensedSystem: the factorized bordered system for one (mesh, layout, sigma).
// Immutable after construction; solves may run concurrently.
////////////////////////////////////////////////////////////////////////////////
class CondensedSystem {
public:
    static constexpr double kResidualTolerance = 1e-10;

    CondensedSystem(const Mesh &mesh, const ElectrodeLayout &layout, const Conductivity &sigma)
        : m_num_nodes(mesh.num_nodes()) {
        if (sigma.size() != mesh.num_elements())
            throw InvalidArgument("conductivity has " + std::to_string(sigma.size()) + " values for " +
                                  std::to_string(mesh.num_elements()) + " elements");
        layout.validate(mesh);

        const auto owner = layout.node_owner(mesh.num_nodes());
        m_dof.assign(mesh.num_nodes(), -1);
        int next = kElectrodeCount;
        for (int v = 0; v < mesh.num_nodes(); ++v) m_dof[v] = owner[v] >= 0 ? owner[v] : next++;
        m_num_dofs = next;

        std::vector<Eigen::Triplet<double>> trips;
        trips.reserve(9 * static_cast<std::size_t>(mesh.num_elements()) + 2 * kElectrodeCount);
        for (int k = 0; k < mesh.num_elements(); ++k) {
            const auto g = mesh.shape_gradients(k);
            const double w = sigma.values()[k] * mesh.area(k);
            const auto &t = mesh.triangle(k);
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b)
                    trips.emplace_back(m_dof[t[a]], m_dof[t[b]], w * g.col(a).dot(g.col(b)));
        }
        m_stiffness.resize(m_num_dofs, m_num_dofs);
        m_stiffness.setFromTriplets(trips.begin(), trips.end());
        for (int e = 0; e < kElectrodeCount; ++e) {
            trips.emplace_back(e, m_num_dofs, 1.0);
            trips.emplace_back(m_num_dofs, e, 1.0);
        }
        m_bordered.resize(m_num_dofs + 1, m_num_dofs + 1);
        m_bordered.setFromTriplets(trips.begin(), trips.end());
        m_bordered.makeCompressed();

        m_lu = std::make_shared<Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>>();
        m_lu->analyzePattern(m_bordered);
        m_lu->factorize(m_bordered);
        if (m_lu->info() != Eigen::Success)
            throw ComputeError("factorization of the condensed system failed: " + m_lu->lastErrorMessage());
    }

    int num_nodes() const { return m_num_nodes; }
    // Unknowns excluding the multiplier: free nodes plus one per electrode.
    int num_dofs() const { return m_num_dofs; }
    int dimension() const { return m_num_dofs + 1; }
    int dof(int node) const { return m_dof[node]; }

    // Condensed stiffness K (num_dofs x num_dofs) and the bordered matrix
    // [K c; c^T 0] with c the indicator of the electrode unknowns.
    const SparseMatrix &stiffness() const { return m_stiffness; }
    const SparseMatrix &bordered() const { return m_bordered; }

    // Solve K x = rhs subject to sum of electrode unknowns = 0. rhs is
    // indexed by dof and must have zero sum for a solution to exist.
    Eigen::MatrixXd solve(const Eigen::MatrixXd &rhs) const {
        if (rhs.rows() != m_num_dofs) throw InvalidArgument("right-hand side has the wrong length");
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(m_num_dofs + 1, rhs.cols());
        b.topRows(m_num_dofs) = rhs;
        Eigen::MatrixXd x = m_lu->solve(b);
        for (int pass = 0;; ++pass) {
            const Eigen::MatrixXd r = b - m_bordered * x;
            double worst = 0;
            for (Eigen::Index c = 0; c < b.cols(); ++c) {
                const double scale = std::max(b.col(c).norm(), 1e-300);
                worst = std::max(worst, r.col(c).norm() / scale);
            }
            if (!std::isfinite(worst)) throw ComputeError("condensed solve produced non-finite values");
            if (worst <= kResidualTolerance) break;
            if (pass == 2)
                throw ComputeError("condensed solve residual " + std::to_string(worst) + " above tolerance");
            x += m_lu->solve(r);
        }
        return x.topRows(m_num_dofs);
    }

    Eigen::VectorXd to_nodes(const Eigen::VectorXd &dofs) const {
        Eigen::VectorXd u(m_num_nodes);
        for (int v = 0; v < m_num_nodes; ++v) u[v] = dofs[m_dof[v]];
        return u;
    }

    Eigen::VectorXd to_dofs(const Eigen::VectorXd &nodes) const {
        Eigen::VectorXd x(m_num_dofs);
        for (int v = 0; v < m_num_nodes; ++v) x[m_dof[v]] = nodes[v];
        return x;
    }

    // Net current leaving the domain through each electrode for a node
    // potential field (the electrode rows of K u).
    std::array<double, kElectrodeCount> electrode_currents(const Eigen::VectorXd &node_potentials) const {
        const Eigen::VectorXd ku = m_stiffness * to_dofs(node_potentials);
        std::array<double, kElectrodeCount> out{};
        for (int e = 0; e < kElectrodeCount; ++e) out[e] = ku[e];
        return out;
    }

    static Eigen::VectorXd injection_rhs(int num_dofs, int j) {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(num_dofs);
        b[j] = 1.0;
        b[(j + 1) % kElectrodeCount] = -1.0;
        return b;
    }

private:
    int m_num_nodes = 0;
    int m_num_dofs = 0;
    std::vector<int> m_dof;
    SparseMatrix m_stiffness;
    SparseMatrix m_bordered;
    std::shared_ptr<Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>>> m_lu;
};

inline CondensedSystem assemble_system(const Mesh &mesh, const ElectrodeLayout &layout, const Conductivity &sigma) {
    return CondensedSystem(mesh, layout, sigma);
}

inline void check_injection(int j) {
    if (j < 0 || j >= kElectrodeCount)
        throw IndexError("injection index " + std::to_string(j) + " outside [0, 16)");
}

// Unit current in at electrode j, out at electrode j + 1.
inline InjectionSolution solve_injection(const CondensedSystem &system, int j) {
    check_injection(j);
    const Eigen::VectorXd x = system.solve(CondensedSystem::injection_rhs(system.num_dofs(), j));
    InjectionSolution s;
    s.node_potentials = system.to_nodes(x);
    for (int e = 0; e < kElectrodeCount; ++e) s.electrode_potentials[e] = x[e];
    return s;
}

inline PotentialSet solve_all(const CondensedSystem &system) {
    Eigen::MatrixXd rhs(system.num_dofs(), kElectrodeCount);
    for (int j = 0; j < kElectrodeCount; ++j) rhs.col(j) = CondensedSystem::injection_rhs(system.num_dofs(), j);
    const Eigen::MatrixXd x = system.solve(rhs);
    PotentialSet ps;
    ps.node_potentials.resize(system.num_nodes(), kElectrodeCount);
    for (int j = 0; j < kElectrodeCount; ++j) ps.node_potentials.col(j) = system.to_nodes(x.col(j));
    ps.electrode_potentials = x.topRows(kElectrodeCount);
    return ps;
}

inline PotentialSet solve_all(const Mesh &mesh, const ElectrodeLayout &layout, const Conductivity &sigma) {
    return solve_all(CondensedSystem(mesh, layout, sigma));
}

inline DataVector extract_data_vector(const PotentialSet &ps) {
    DataVector v;
    for (int r = 0; r < kDataLength; ++r) {
        const auto [j, i] = measurement_pair(r);
        v[r] = ps.electrode_potentials(i, j) - ps.electrode_potentials((i + 1) % kElectrodeCount, j);
    }
    return v;
}

// Convenience: nonlinear forward map sigma -> data vector.
inline DataVector forward_data(const Mesh &mesh, const ElectrodeLayout &layout, const Conductivity &sigma) {
    return extract_data_vector(solve_all(mesh, layout, sigma));
}

////////////////////////////////////////////////////////////////////////////////
// Adjoint dipole potentials
//
// phi_j^k solves the same condensed, grounded problem with the load
// K_k u_j, where K_k is the unit-conductivity stiffness of element k alone
// (the exact P1 weak form of div(chi_k grad u_j)). Then for every i
//
//     int_{Delta_k} grad u_i . grad u_j = phi_j^k(E_i) - phi_j^k(E_{i+1}).
////////////////////////////////////////////////////////////////////////////////
struct AdjointSolution {
    Eigen::VectorXd node_potentials;
    std::array<double, kElectrodeCount> electrode_potentials{};
};

inline AdjointSolution solve_adjoint_dipole(const CondensedSystem &system, const Mesh &mesh, int k,
                                            const PotentialSet &ps, int j) {
    check_injection(j);
    if (k < 0 || k >= mesh.num_elements())
        throw IndexError("element index " + std::to_string(k) + " outside the mesh");
    if (system.num_nodes() != mesh.num_nodes() || ps.node_potentials.rows() != mesh.num_nodes())
        throw InvalidArgument("adjoint solve: mesh, system and potentials disagree");

    const auto g = mesh.shape_gradients(k);
    const auto &t = mesh.triangle(k);
    Eigen::Vector3d uj(ps.node_potentials(t[0], j), ps.node_potentials(t[1], j), ps.node_potentials(t[2], j));
    const Eigen::Vector3d local = mesh.area(k) * (g.transpose() * (g * uj));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(system.num_dofs());
    for (int a = 0; a < 3; ++a) rhs[system.dof(t[a])] += local[a];

    const Eigen::VectorXd x = system.solve(rhs);
    AdjointSolution s;
    s.node_potentials = system.to_nodes(x);
    for (int e = 0; e < kElectrodeCount; ++e) s.electrode_potentials[e] = x[e];
    return s;
}

} // namespace eitfer
