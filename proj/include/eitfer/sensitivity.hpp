#pragma once
// Sensitivity (Jacobian) matrix of the adjacent-drive data with respect to
// per-element conductivity, its column correlations, the fidelity-embedding
// diagonal regularizer and the resulting averaging kernel.

#include "eitfer/binary_io.hpp"
#include "eitfer/forward.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace eitfer {

// 208 x n_elem, rows in data-vector order, column k for element k.
class SensitivityMatrix {
public:
    SensitivityMatrix() = default;
    explicit SensitivityMatrix(Eigen::MatrixXd entries) : m_entries(std::move(entries)) {
        if (m_entries.rows() != kDataLength)
            throw InvalidArgument("sensitivity matrix must have 208 rows");
    }
    const Eigen::MatrixXd &matrix() const { return m_entries; }
    Eigen::Index rows() const { return m_entries.rows(); }
    Eigen::Index cols() const { return m_entries.cols(); }
    auto column(Eigen::Index k) const { return m_entries.col(k); }

private:
    Eigen::MatrixXd m_entries;
};

// S(row(j, i), k) = -|Delta_k| grad u_i . grad u_j, with the constant P1
// gradients on element k. ps must come from a solve on mesh.
inline SensitivityMatrix assemble_sensitivity(const Mesh &mesh, const PotentialSet &ps) {
    if (ps.node_potentials.rows() != mesh.num_nodes() || ps.node_potentials.cols() != kElectrodeCount)
        throw InvalidArgument("potential set does not belong to this mesh");
    Eigen::MatrixXd s(kDataLength, mesh.num_elements());
    for (int k = 0; k < mesh.num_elements(); ++k) {
        const auto &t = mesh.triangle(k);
        Eigen::Matrix<double, 3, kElectrodeCount> local;
        for (int a = 0; a < 3; ++a) local.row(a) = ps.node_potentials.row(t[a]);
        const Eigen::Matrix<double, 2, kElectrodeCount> grad = mesh.shape_gradients(k) * local;
        const Eigen::Matrix<double, kElectrodeCount, kElectrodeCount> gram = mesh.area(k) * (grad.transpose() * grad);
        for (int r = 0; r < kDataLength; ++r) {
            const auto [j, i] = measurement_pair(r);
            s(r, k) = -gram(i, j);
        }
    }
    return SensitivityMatrix(std::move(s));
}

inline void check_column(const SensitivityMatrix &s, Eigen::Index k) {
    if (k < 0 || k >= s.cols()) throw IndexError("column " + std::to_string(k) + " out of range");
}

inline double column_correlation(const SensitivityMatrix &s, Eigen::Index k, Eigen::Index l) {
    check_column(s, k);
    check_column(s, l);
    return s.column(k).dot(s.column(l));
}

inline double normalized_correlation(const SensitivityMatrix &s, Eigen::Index k, Eigen::Index l) {
    const double nk = s.column(k).norm(), nl = s.column(l).norm();
    if (nk == 0 || nl == 0) throw ComputeError("zero sensitivity column");
    return column_correlation(s, k, l) / (nk * nl);
}

////////////////////////////////////////////////////////////////////////////////
// FidelityRegularizer
//
// diag[k] = sqrt(sum_l |<S_k, S_l>|), the sum running over every column
// including l = k. The Gram matrix is formed one block of columns at a time.
////////////////////////////////////////////////////////////////////////////////
struct FidelityRegularizer {
    Eigen::VectorXd diag;

    // Diagonal of R^T R, i.e. sum_l |<S_k, S_l>|.
    Eigen::VectorXd squared() const { return diag.cwiseAbs2(); }
};

inline FidelityRegularizer build_fidelity_regularizer(const SensitivityMatrix &s, Eigen::Index block = 256) {
    const Eigen::Index n = s.cols();
    FidelityRegularizer r;
    r.diag.resize(n);
    for (Eigen::Index b0 = 0; b0 < n; b0 += block) {
        const Eigen::Index bs = std::min(block, n - b0);
        const Eigen::MatrixXd gram = s.matrix().transpose() * s.matrix().middleCols(b0, bs);
        for (Eigen::Index c = 0; c < bs; ++c) {
            const double total = gram.col(c).cwiseAbs().sum();
            if (!(total > 0)) throw ComputeError("sensitivity column " + std::to_string(b0 + c) + " is zero");
            r.diag[b0 + c] = std::sqrt(total);
        }
    }
    return r;
}

// Column-selected copy of S; elements[c] is the mesh element of column c.
struct BoundarySubmatrix {
    Eigen::MatrixXd entries;
    std::vector<int> elements;
};

inline BoundarySubmatrix boundary_submatrix(const SensitivityMatrix &s, const std::vector<int> &elements) {
    if (elements.empty()) throw InvalidArgument("boundary submatrix needs at least one column");
    BoundarySubmatrix b;
    b.entries.resize(s.rows(), static_cast<Eigen::Index>(elements.size()));
    for (std::size_t c = 0; c < elements.size(); ++c) {
        check_column(s, elements[c]);
        b.entries.col(static_cast<Eigen::Index>(c)) = s.column(elements[c]);
    }
    b.elements = elements;
    return b;
}

// Row k of the averaging kernel, W(k, l) = <S_k, S_l> / sum_i |<S_k, S_i>|.
inline Eigen::VectorXd kernel_row(const SensitivityMatrix &s, const FidelityRegularizer &r, Eigen::Index k) {
    check_column(s, k);
    if (r.diag.size() != s.cols()) throw InvalidArgument("regularizer does not match the sensitivity matrix");
    const double scale = r.diag[k] * r.diag[k];
    if (!(scale > 0)) throw ComputeError("zero kernel normalisation");
    return s.matrix().transpose() * s.column(k) / scale;
}

////////////////////////////////////////////////////////////////////////////////
// Cache file
//   "EITS1", u32 rows, u32 cols, 32-byte hash, rows*cols f64 (row-major, LE)
// The hash is SHA-256 over the cache key followed by the payload bytes, so a
// mismatched key and a damaged payload are both detected on load.
////////////////////////////////////////////////////////////////////////////////
inline std::string sensitivity_cache_key(const Mesh &mesh, const ElectrodeLayout &layout, double sigma_ref) {
    std::string key = "mesh\n" + mesh_to_string(mesh) + "layout\n";
    for (const auto &g : layout.groups()) {
        for (int v : g) key += std::to_string(v) + " ";
        key += "\n";
    }
    key += "sigma_ref ";
    binary::put(key, sigma_ref);
    return key;
}

namespace detail {
inline std::string sensitivity_payload(const Eigen::MatrixXd &m) {
    std::string p;
    p.reserve(static_cast<std::size_t>(m.size()) * 8);
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) binary::put(p, m(r, c));
    return p;
}
} // namespace detail

inline std::string encode_sensitivity_cache(const SensitivityMatrix &s, const std::string &key) {
    const std::string payload = detail::sensitivity_payload(s.matrix());
    const auto digest = Sha256().update(key).update(payload).digest();
    std::string out = "EITS1";
    binary::put(out, static_cast<std::uint32_t>(s.rows()));
    binary::put(out, static_cast<std::uint32_t>(s.cols()));
    out.append(reinterpret_cast<const char *>(digest.data()), digest.size());
    out += payload;
    return out;
}

// nullopt when the bytes are not a valid cache for key.
inline std::optional<SensitivityMatrix> decode_sensitivity_cache(std::string_view bytes, const std::string &key) {
    try {
        binary::Reader in(bytes);
        if (in.take(5) != "EITS1") return std::nullopt;
        const auto rows = in.get<std::uint32_t>();
        const auto cols = in.get<std::uint32_t>();
        const auto stored = in.take(32);
        if (rows != kDataLength || in.remaining() != static_cast<std::size_t>(rows) * cols * 8) return std::nullopt;
        const auto payload = bytes.substr(in.position());
        const auto digest = Sha256().update(key).update(payload).digest();
        if (stored != std::string_view(reinterpret_cast<const char *>(digest.data()), digest.size()))
            return std::nullopt;
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in.get<double>();
        return SensitivityMatrix(std::move(m));
    } catch (const IoError &) {
        return std::nullopt;
    }
}

inline void save_sensitivity_cache(const std::string &path, const SensitivityMatrix &s, const std::string &key) {
    write_file(path, encode_sensitivity_cache(s, key));
}

inline std::optional<SensitivityMatrix> load_sensitivity_cache(const std::string &path, const std::string &key) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) return std::nullopt;
    return decode_sensitivity_cache(read_file(path), key);
}

} // namespace eitfer
