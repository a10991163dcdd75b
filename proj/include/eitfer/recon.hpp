#pragma once
// Linearised time-difference reconstruction: fidelity-embedded
// regularization (finite lambda and the direct lambda = inf formula), the
// identity-regularized least-squares baseline, and the boundary-subspace
// motion-artifact filter applied to data before reconstruction.
//
// The regularized normal equations are n_elem x n_elem, but with only 208
// data rows every solve goes through the 208 x 208 push-through form
//
//   (S^T S + lambda M)^{-1} S^T = M^{-1} S^T (S M^{-1} S^T + lambda I)^{-1}
//
// for diagonal positive M.

#include "eitfer/frames.hpp"
#include "eitfer/sensitivity.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace eitfer {

inline constexpr double kInfiniteLambda = std::numeric_limits<double>::infinity();

struct ConductivityImage {
    Eigen::VectorXd values;
    std::string method;
    double lambda = 0;
    std::optional<double> lambda_b; // set when the data were motion filtered
    int frame = 0;
    double timestamp = 0;
};

inline std::string format_lambda(double lambda) {
    return std::isinf(lambda) ? std::string("inf") : detail::fmt_double(lambda);
}

////////////////////////////////////////////////////////////////////////////////
// Fidelity-embedded regularization
//
//   0 < lambda < inf:  sqrt(1 + lambda^2) (S^T S + lambda D)^{-1} S^T v
//   lambda = inf:      D^{-1} S^T v
//
// with D = R_FE^T R_FE = diag(sum_l |<S_k, S_l>|). The infinite branch is a
// single matrix-vector product: element k receives <S_k, v> / D_kk.
////////////////////////////////////////////////////////////////////////////////
class FerReconstructor {
public:
    FerReconstructor(const SensitivityMatrix &s, const FidelityRegularizer &r, double lambda)
        : m_lambda(lambda) {
        if (std::isnan(lambda) || lambda <= 0)
            throw InvalidArgument("FER lambda must be positive or inf");
        if (r.diag.size() != s.cols()) throw InvalidArgument("regularizer does not match the sensitivity matrix");
        m_weighted_adjoint = r.squared().cwiseInverse().asDiagonal() * s.matrix().transpose();
        if (!std::isinf(lambda)) {
            Eigen::MatrixXd inner = s.matrix() * m_weighted_adjoint;
            inner.diagonal().array() += lambda;
            m_inner.emplace(inner);
            if (m_inner->info() != Eigen::Success) throw ComputeError("FER system is not positive definite");
            m_scale = std::sqrt(1.0 + lambda * lambda);
        }
    }

    double lambda() const { return m_lambda; }

    Eigen::VectorXd apply(const DataVector &vdot) const {
        if (!m_inner) return m_weighted_adjoint * vdot.values();
        return m_scale * (m_weighted_adjoint * m_inner->solve(vdot.values()));
    }

    ConductivityImage reconstruct(const DataVector &vdot) const {
        ConductivityImage img;
        img.values = apply(vdot);
        img.method = "fer";
        img.lambda = m_lambda;
        return img;
    }

private:
    double m_lambda;
    double m_scale = 1.0;
    Eigen::MatrixXd m_weighted_adjoint; // D^{-1} S^T
    std::optional<Eigen::LLT<Eigen::MatrixXd>> m_inner;
};

inline ConductivityImage fer_reconstruct(const SensitivityMatrix &s, const FidelityRegularizer &r,
                                         const DataVector &vdot, double lambda) {
    return FerReconstructor(s, r, lambda).reconstruct(vdot);
}

////////////////////////////////////////////////////////////////////////////////
// Standard regularized least squares with R = I:
//   (S^T S + lambda * max_k ||S_k||^2 I)^{-1} S^T v
// lambda is relative to the largest diagonal entry of S^T S.
////////////////////////////////////////////////////////////////////////////////
class StandardReconstructor {
public:
    StandardReconstructor(const SensitivityMatrix &s, double lambda) : m_lambda(lambda), m_adjoint(s.matrix().transpose()) {
        if (!(lambda > 0) || std::isinf(lambda))
            throw InvalidArgument("standard reconstruction needs a finite positive lambda");
        m_absolute_lambda = lambda * s.matrix().colwise().squaredNorm().maxCoeff();
        Eigen::MatrixXd inner = s.matrix() * m_adjoint;
        inner.diagonal().array() += m_absolute_lambda;
        m_inner.compute(inner);
        if (m_inner.info() != Eigen::Success) throw ComputeError("standard system is not positive definite");
    }

    double lambda() const { return m_lambda; }
    double absolute_lambda() const { return m_absolute_lambda; }

    Eigen::VectorXd apply(const DataVector &vdot) const { return m_adjoint * m_inner.solve(vdot.values()); }

    ConductivityImage reconstruct(const DataVector &vdot) const {
        ConductivityImage img;
        img.values = apply(vdot);
        img.method = "standard";
        img.lambda = m_lambda;
        return img;
    }

private:
    double m_lambda;
    double m_absolute_lambda = 0;
    Eigen::MatrixXd m_adjoint;
    Eigen::LLT<Eigen::MatrixXd> m_inner;
};

inline ConductivityImage standard_reconstruct(const SensitivityMatrix &s, const DataVector &vdot, double lambda) {
    return StandardReconstructor(s, lambda).reconstruct(vdot);
}

////////////////////////////////////////////////////////////////////////////////
// Motion-artifact filter
//
//   err      = S_b (S_b^T S_b + lambda_b I)^{-1} S_b^T v
//   filtered = v - err
//
// evaluated as S_b S_b^T (S_b S_b^T + lambda_b I)^{-1} v.
////////////////////////////////////////////////////////////////////////////////
struct FilteredData {
    DataVector filtered;
    DataVector error;
};

inline double default_lambda_b(const BoundarySubmatrix &sb) {
    return 0.01 * sb.entries.colwise().squaredNorm().maxCoeff();
}

class MotionFilter {
public:
    MotionFilter(const BoundarySubmatrix &sb, double lambda_b) : m_lambda_b(lambda_b) {
        if (!(lambda_b > 0) || std::isinf(lambda_b)) throw InvalidArgument("lambda_b must be positive and finite");
        if (sb.entries.cols() == 0) throw InvalidArgument("motion filter needs a nonempty boundary submatrix");
        m_outer = sb.entries * sb.entries.transpose();
        Eigen::MatrixXd shifted = m_outer;
        shifted.diagonal().array() += lambda_b;
        m_shifted.compute(shifted);
        if (m_shifted.info() != Eigen::Success) throw ComputeError("motion filter system is not positive definite");
    }

    double lambda_b() const { return m_lambda_b; }

    FilteredData apply(const DataVector &vdot) const {
        DataVector err(m_outer * m_shifted.solve(vdot.values()));
        return {vdot - err, err};
    }

private:
    double m_lambda_b;
    Eigen::MatrixXd m_outer;
    Eigen::LLT<Eigen::MatrixXd> m_shifted;
};

inline FilteredData motion_filter(const BoundarySubmatrix &sb, const DataVector &vdot, double lambda_b) {
    return MotionFilter(sb, lambda_b).apply(vdot);
}

// V(t_m) - V(t_ref) for every frame.
inline std::vector<DataVector> time_difference(const FrameSequence &seq, std::size_t reference) {
    if (reference >= seq.size())
        throw IndexError("reference frame " + std::to_string(reference) + " outside the sequence");
    std::vector<DataVector> out;
    out.reserve(seq.size());
    for (const auto &f : seq.frames()) out.push_back(f.data - seq[reference].data);
    return out;
}

////////////////////////////////////////////////////////////////////////////////
// Image CSV: '#' metadata lines, then "element_index,value" rows.
////////////////////////////////////////////////////////////////////////////////
inline std::string image_to_csv(const ConductivityImage &img) {
    std::string out = "# method=" + img.method + "\n# lambda=" + format_lambda(img.lambda) + "\n";
    out += "# lambda_b=" + (img.lambda_b ? detail::fmt_double(*img.lambda_b) : std::string("off")) + "\n";
    out += "# frame=" + std::to_string(img.frame) + "\n# t=" + detail::fmt_double(img.timestamp) + "\n";
    out += "element_index,value\n";
    for (Eigen::Index k = 0; k < img.values.size(); ++k)
        out += std::to_string(k) + "," + detail::fmt_double(img.values[k]) + "\n";
    return out;
}

inline ConductivityImage image_from_csv(const std::string &text) {
    auto number = [](const std::string &v) {
        std::size_t used = 0;
        double d = 0;
        try {
            d = std::stod(v, &used);
        } catch (const std::exception &) {
            used = 0;
        }
        if (used == 0 || used != v.size()) throw ParseError("image CSV: bad number '" + v + "'");
        return d;
    };
    std::istringstream in(text);
    std::string line;
    ConductivityImage img;
    std::vector<double> values;
    bool header = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(2, eq - 2), val = line.substr(eq + 1);
            if (key == "method") img.method = val;
            else if (key == "lambda") img.lambda = val == "inf" ? kInfiniteLambda : number(val);
            else if (key == "lambda_b" && val != "off") img.lambda_b = number(val);
            else if (key == "frame") img.frame = static_cast<int>(number(val));
            else if (key == "t") img.timestamp = number(val);
            continue;
        }
        if (!header) {
            if (line != "element_index,value") throw ParseError("image CSV: missing 'element_index,value' header");
            header = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError("image CSV: malformed row '" + line + "'");
        if (number(line.substr(0, comma)) != static_cast<double>(values.size()))
            throw ParseError("image CSV: element indices must be 0, 1, 2, ...");
        values.push_back(number(line.substr(comma + 1)));
    }
    img.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    return img;
}

} // namespace eitfer
