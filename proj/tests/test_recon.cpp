#include "support.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace eitfer;
using eitfer::testing::Disk;
using eitfer::testing::random_data;
using eitfer::testing::small_disk;
using eitfer::testing::standard_disk;

namespace {

// 48-element fan around the origin.
struct Toy {
    Mesh mesh;
    ElectrodeLayout layout;
    SensitivityMatrix sensitivity;

    static Mesh fan(int n) {
        std::vector<Point> nodes{{0, 0}};
        std::vector<Triangle> tris;
        for (int i = 0; i < n; ++i) {
            const double a = 2 * std::numbers::pi * i / n;
            nodes.emplace_back(std::cos(a), std::sin(a));
            tris.push_back({0, 1 + i, 1 + (i + 1) % n});
        }
        return Mesh(nodes, tris);
    }

    Toy()
        : mesh(fan(48)), layout(assign_electrodes(mesh, 0.7)),
          sensitivity(assemble_sensitivity(mesh, solve_all(mesh, layout, Conductivity::uniform(mesh.num_elements())))) {}
};

FrameSequence sequence(std::vector<DataVector> data) {
    std::vector<Frame> frames;
    for (std::size_t m = 0; m < data.size(); ++m) frames.push_back({0.5 * static_cast<double>(m), data[m]});
    return FrameSequence(std::move(frames), {});
}

} // namespace

TEST(Fer, ZeroDataGivesZeroImage) {
    const Disk &d = small_disk();
    for (double lambda : {0.05, 0.2, 1.0, 1e6, kInfiniteLambda}) {
        const auto img = fer_reconstruct(d.sensitivity, d.regularizer, DataVector(), lambda);
        EXPECT_EQ(img.values.size(), d.mesh.num_elements());
        EXPECT_EQ(img.values.cwiseAbs().maxCoeff(), 0.0);
        EXPECT_EQ(img.method, "fer");
    }
}

TEST(Fer, InfiniteBranchMatchesElementwiseFormula) {
    const Disk &d = small_disk();
    const auto &s = d.sensitivity.matrix();
    const int n = static_cast<int>(s.cols());
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 3; ++trial) {
        const DataVector v = random_data(rng);
        const Eigen::VectorXd img = FerReconstructor(d.sensitivity, d.regularizer, kInfiniteLambda).apply(v);
        for (int k = 0; k < n; ++k) {
            double norm = 0, dot = 0;
            for (int l = 0; l < n; ++l) {
                double c = 0;
                for (int r = 0; r < kDataLength; ++r) c += s(r, k) * s(r, l);
                norm += std::abs(c);
            }
            for (int r = 0; r < kDataLength; ++r) dot += s(r, k) * v[r];
            EXPECT_NEAR(img[k], dot / norm, 1e-12 * std::abs(dot / norm) + 1e-300);
        }
    }
}

TEST(Fer, FiniteBranchMatchesDenseNormalEquations) {
    const Disk &d = small_disk();
    const auto &s = d.sensitivity.matrix();
    std::mt19937_64 rng(2);
    const DataVector v = random_data(rng);
    const Eigen::VectorXd dd = d.regularizer.diag.cwiseAbs2();
    for (double lambda : {0.05, 0.2, 3.0}) {
        Eigen::MatrixXd normal = s.transpose() * s;
        normal.diagonal() += lambda * dd;
        const Eigen::VectorXd expect = std::sqrt(1 + lambda * lambda) * normal.ldlt().solve(s.transpose() * v.values());
        const Eigen::VectorXd got = FerReconstructor(d.sensitivity, d.regularizer, lambda).apply(v);
        EXPECT_LE((got - expect).norm(), 1e-8 * expect.norm()) << "lambda " << lambda;
    }
}

TEST(Fer, ConvergesToInfiniteBranch) {
    const Disk &d = standard_disk();
    std::mt19937_64 rng(8);
    const DataVector v = random_data(rng);
    const Eigen::VectorXd inf = FerReconstructor(d.sensitivity, d.regularizer, kInfiniteLambda).apply(v);
    double previous = std::numeric_limits<double>::infinity();
    for (double lambda : {1e2, 1e4, 1e6, 1e8}) {
        const double dist = (FerReconstructor(d.sensitivity, d.regularizer, lambda).apply(v) - inf).norm() / inf.norm();
        EXPECT_LT(dist, previous);
        previous = dist;
    }
    EXPECT_LE(previous, 1e-3);
}

TEST(Fer, Linear) {
    const Disk &d = small_disk();
    std::mt19937_64 rng(4);
    const DataVector a = random_data(rng), b = random_data(rng);
    for (double lambda : {0.2, kInfiniteLambda}) {
        const FerReconstructor fer(d.sensitivity, d.regularizer, lambda);
        const Eigen::VectorXd lhs = fer.apply(2.5 * a + (-0.75) * b);
        const Eigen::VectorXd rhs = 2.5 * fer.apply(a) - 0.75 * fer.apply(b);
        EXPECT_LE((lhs - rhs).norm(), 1e-12 * rhs.norm());
    }
}

TEST(Fer, RejectsNonPositiveLambda) {
    const Disk &d = small_disk();
    EXPECT_THROW(FerReconstructor(d.sensitivity, d.regularizer, 0.0), InvalidArgument);
    EXPECT_THROW(FerReconstructor(d.sensitivity, d.regularizer, -1.0), InvalidArgument);
    EXPECT_THROW(FerReconstructor(d.sensitivity, d.regularizer, std::nan("")), InvalidArgument);
    FidelityRegularizer wrong{Eigen::VectorXd::Ones(3)};
    EXPECT_THROW(FerReconstructor(d.sensitivity, wrong, 1.0), InvalidArgument);
}

TEST(Standard, MatchesDenseSolveOnToyMesh) {
    const Toy toy;
    ASSERT_EQ(toy.mesh.num_elements(), 48);
    const auto &s = toy.sensitivity.matrix();
    std::mt19937_64 rng(13);
    const DataVector v = random_data(rng);
    for (double lambda : {1e-4, 1e-2, 1.0}) {
        const StandardReconstructor st(toy.sensitivity, lambda);
        const double absolute = lambda * s.colwise().squaredNorm().maxCoeff();
        EXPECT_DOUBLE_EQ(st.absolute_lambda(), absolute);
        Eigen::MatrixXd normal = s.transpose() * s;
        normal.diagonal().array() += absolute;
        const Eigen::VectorXd expect = normal.ldlt().solve(s.transpose() * v.values());
        EXPECT_LE((st.apply(v) - expect).norm(), 1e-10 * expect.norm()) << "lambda " << lambda;
    }
}

TEST(Standard, ZeroDataAndOverRegularization) {
    const Disk &d = small_disk();
    EXPECT_EQ(standard_reconstruct(d.sensitivity, DataVector(), 0.1).values.cwiseAbs().maxCoeff(), 0.0);
    std::mt19937_64 rng(6);
    const DataVector v = random_data(rng);
    double previous = std::numeric_limits<double>::infinity();
    for (double lambda : {1e-2, 1e0, 1e2, 1e4, 1e6}) {
        const double norm = standard_reconstruct(d.sensitivity, v, lambda).values.norm();
        EXPECT_LT(norm, previous);
        previous = norm;
    }
    const double scale = d.sensitivity.matrix().colwise().squaredNorm().maxCoeff();
    const Eigen::VectorXd limit = d.sensitivity.matrix().transpose() * v.values() / (1e6 * scale);
    EXPECT_LE((standard_reconstruct(d.sensitivity, v, 1e6).values - limit).norm(), 1e-3 * limit.norm());
}

TEST(Standard, RejectsInvalidLambda) {
    const Disk &d = small_disk();
    EXPECT_THROW(StandardReconstructor(d.sensitivity, 0.0), InvalidArgument);
    EXPECT_THROW(StandardReconstructor(d.sensitivity, -2.0), InvalidArgument);
    EXPECT_THROW(StandardReconstructor(d.sensitivity, kInfiniteLambda), InvalidArgument);
}

TEST(Standard, Linear) {
    const Disk &d = small_disk();
    std::mt19937_64 rng(14);
    const DataVector a = random_data(rng), b = random_data(rng);
    const StandardReconstructor st(d.sensitivity, 0.01);
    const Eigen::VectorXd rhs = 3.0 * st.apply(a) + 0.5 * st.apply(b);
    EXPECT_LE((st.apply(3.0 * a + 0.5 * b) - rhs).norm(), 1e-12 * rhs.norm());
}

TEST(MotionFilter, DecompositionIsExact) {
    const Disk &d = small_disk();
    const BoundarySubmatrix sb = boundary_submatrix(d.sensitivity, boundary_elements(d.mesh));
    std::mt19937_64 rng(1);
    const DataVector v = random_data(rng);
    const FilteredData f = motion_filter(sb, v, default_lambda_b(sb));
    EXPECT_LE(((f.filtered + f.error) - v).values().cwiseAbs().maxCoeff(),
              4 * std::numeric_limits<double>::epsilon() * v.values().cwiseAbs().maxCoeff());
}

TEST(MotionFilter, AnnihilatesOrthogonalComplement) {
    const Disk &d = small_disk();
    const BoundarySubmatrix sb = boundary_submatrix(d.sensitivity, boundary_elements(d.mesh));
    ASSERT_LT(sb.entries.cols(), kDataLength);
    // Project a random vector off the column space via a full QR.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(sb.entries);
    const Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd basis = q.leftCols(sb.entries.cols());
    std::mt19937_64 rng(7);
    const Eigen::VectorXd x = random_data(rng).values();
    const DataVector v(x - basis * (basis.transpose() * x));
    const FilteredData f = motion_filter(sb, v, default_lambda_b(sb));
    EXPECT_LE(f.error.norm(), 1e-12 * v.norm() * 1e3);
    EXPECT_LE((f.filtered - v).norm(), 1e-9 * v.norm());
}

TEST(MotionFilter, RemovesPureBoundarySignatureAsLambdaVanishes) {
    const Disk &d = small_disk();
    const BoundarySubmatrix sb = boundary_submatrix(d.sensitivity, boundary_elements(d.mesh));
    const DataVector v(sb.entries.col(3));
    const double scale = sb.entries.colwise().squaredNorm().maxCoeff();
    double previous = 1.0;
    for (double rel : {1e-2, 1e-4, 1e-6, 1e-8}) {
        const double ratio = motion_filter(sb, v, rel * scale).filtered.norm() / v.norm();
        EXPECT_LT(ratio, previous);
        previous = ratio;
    }
    EXPECT_LT(previous, 1e-2);
}

TEST(MotionFilter, ErrorShrinksAsLambdaGrows) {
    const Disk &d = small_disk();
    const BoundarySubmatrix sb = boundary_submatrix(d.sensitivity, boundary_elements(d.mesh));
    std::mt19937_64 rng(19);
    const DataVector v = random_data(rng);
    const double scale = sb.entries.colwise().squaredNorm().maxCoeff();
    double previous = std::numeric_limits<double>::infinity();
    for (double rel : {1e-6, 1e-4, 1e-2, 1.0, 1e2}) {
        const FilteredData f = motion_filter(sb, v, rel * scale);
        EXPECT_LE(f.error.norm(), previous);
        previous = f.error.norm();
        // The error lies in the column space of S_bdry.
        const Eigen::VectorXd coeff = sb.entries.colPivHouseholderQr().solve(f.error.values());
        EXPECT_LE((sb.entries * coeff - f.error.values()).norm(), 1e-8 * std::max(f.error.norm(), 1e-300));
    }
}

TEST(MotionFilter, Validation) {
    const Disk &d = small_disk();
    const BoundarySubmatrix sb = boundary_submatrix(d.sensitivity, boundary_elements(d.mesh));
    EXPECT_THROW(MotionFilter(sb, 0.0), InvalidArgument);
    EXPECT_THROW(MotionFilter(sb, -1.0), InvalidArgument);
    EXPECT_DOUBLE_EQ(default_lambda_b(sb), 0.01 * (sb.entries.transpose() * sb.entries).diagonal().maxCoeff());
}

TEST(TimeDifference, Properties) {
    std::mt19937_64 rng(10);
    const DataVector v0 = random_data(rng), v1 = random_data(rng), v2 = random_data(rng);
    const FrameSequence seq = sequence({v0, v1, v2});
    const auto diff = time_difference(seq, 0);
    ASSERT_EQ(diff.size(), 3u);
    EXPECT_EQ(diff[0].norm(), 0.0);
    EXPECT_LE(((diff[2] - diff[1]) - (v2 - v1)).norm(), 1e-14 * v2.norm());
    EXPECT_TRUE(time_difference(seq, 1)[1] == DataVector());
    for (const auto &d : time_difference(sequence({v1, v1, v1}), 2)) EXPECT_EQ(d.norm(), 0.0);
    EXPECT_THROW(time_difference(seq, 3), IndexError);
}

TEST(ImageCsv, RoundTripWithMetadata) {
    ConductivityImage img;
    img.values = Eigen::VectorXd::LinSpaced(5, -1.0 / 3.0, 2.0 / 7.0);
    img.method = "fer";
    img.lambda = kInfiniteLambda;
    img.lambda_b = 1.25e-5;
    img.frame = 17;
    img.timestamp = 17.0 / 9.0;
    const std::string text = image_to_csv(img);
    EXPECT_NE(text.find("element_index,value\n0,"), std::string::npos);
    const ConductivityImage back = image_from_csv(text);
    EXPECT_TRUE(back.values == img.values);
    EXPECT_EQ(back.method, "fer");
    EXPECT_TRUE(std::isinf(back.lambda));
    EXPECT_EQ(back.lambda_b, img.lambda_b);
    EXPECT_EQ(back.frame, 17);
    EXPECT_EQ(back.timestamp, img.timestamp);

    img.lambda_b.reset();
    img.lambda = 0.2;
    const ConductivityImage plain = image_from_csv(image_to_csv(img));
    EXPECT_FALSE(plain.lambda_b.has_value());
    EXPECT_EQ(plain.lambda, 0.2);
}

TEST(ImageCsv, MalformedInput) {
    EXPECT_THROW(image_from_csv("0,1\n"), ParseError);
    EXPECT_THROW(image_from_csv("element_index,value\n0,abc\n"), ParseError);
    EXPECT_THROW(image_from_csv("element_index,value\n1,0.5\n"), ParseError);
    EXPECT_THROW(image_from_csv("# lambda=oops\nelement_index,value\n"), ParseError);
    EXPECT_THROW(image_from_csv("element_index,value\n0 0.5\n"), ParseError);
}
