#pragma once
// Shared fixtures for the test suites. Expensive objects are built once per
// test binary and handed out by const reference.

#include "eitfer/eitfer.hpp"

#include <filesystem>
#include <random>
#include <string>

namespace eitfer::testing {

struct Disk {
    Mesh mesh;
    ElectrodeLayout layout;
    CondensedSystem system;
    PotentialSet potentials;
    SensitivityMatrix sensitivity;
    FidelityRegularizer regularizer;

    explicit Disk(double h, double coverage = 0.5, int ring_multiple = 1)
        : mesh(generate_disk_mesh(1.0, h, ring_multiple)), layout(assign_electrodes(mesh, coverage)),
          system(mesh, layout, Conductivity::uniform(mesh.num_elements())), potentials(solve_all(system)),
          sensitivity(assemble_sensitivity(mesh, potentials)), regularizer(build_fidelity_regularizer(sensitivity)) {}
};

// Default reconstruction disk (about 2.5k elements).
inline const Disk &standard_disk() {
    static const Disk d(0.05);
    return d;
}

// A few hundred elements, for dense brute-force oracles.
inline const Disk &small_disk() {
    static const Disk d(0.12);
    return d;
}

// Unit square split along its diagonal.
inline Mesh unit_square() {
    return Mesh({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, {{0, 1, 2}, {0, 2, 3}});
}

inline double cosine(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
    return a.dot(b) / (a.norm() * b.norm());
}

inline DataVector random_data(std::mt19937_64 &rng) {
    std::normal_distribution<double> g;
    DataVector v;
    for (int r = 0; r < kDataLength; ++r) v[r] = g(rng);
    return v;
}

// Fresh empty directory under the system temp dir.
inline std::string scratch_dir(const std::string &name) {
    const auto p = std::filesystem::temp_directory_path() / ("eitfer-test-" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

} // namespace eitfer::testing
