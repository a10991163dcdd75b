#pragma once
// Synthetic ground truth and simulated measurements.
//
// Frames are simulated on one uniform refinement of the reconstruction mesh
// with the full nonlinear forward solve, so the reconstruction's own
// sensitivity matrix never produces its test data.

#include "eitfer/frames.hpp"
#include "eitfer/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace eitfer {

// Raised-cosine cycle in [0, 1]: 0 at t = 0 (full expiration), 1 at half
// period (peak inhalation).
struct Waveform {
    double frequency = 0.25; // Hz
    double phase = 0.0;      // radians

    double value(double t) const { return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * frequency * t + phase)); }
};

struct Inclusion {
    Point center{0, 0};
    Eigen::Vector2d semi_axes{0.1, 0.1};
    double orientation = 0.0; // radians, rotation of the first semi-axis from +x
    double amplitude = 0.0;   // conductivity change at waveform value 1
    Waveform waveform;

    bool contains(const Point &p) const {
        const Point d = p - center;
        const double c = std::cos(orientation), s = std::sin(orientation);
        const double u = (c * d.x() + s * d.y()) / semi_axes.x();
        const double v = (-s * d.x() + c * d.y()) / semi_axes.y();
        return u * u + v * v <= 1.0;
    }

    Point boundary_point(double angle) const {
        const double c = std::cos(orientation), s = std::sin(orientation);
        const double u = semi_axes.x() * std::cos(angle), v = semi_axes.y() * std::sin(angle);
        return center + Point(c * u - s * v, s * u + c * v);
    }
};

struct Scenario {
    std::vector<Inclusion> inclusions;
    int frame_count = 40;
    double frame_period = 1.0 / 9.0; // seconds

    double time(int m) const { return m * frame_period; }

    double conductivity_at(const Point &p, double t) const {
        double sigma = 1.0;
        for (const auto &inc : inclusions)
            if (inc.contains(p)) sigma += inc.amplitude * inc.waveform.value(t);
        return sigma;
    }

    std::string canonical_text() const {
        std::string s = "scenario frames=" + std::to_string(frame_count) + " period=" + detail::fmt_double(frame_period) + "\n";
        for (const auto &inc : inclusions)
            s += "ellipse " + detail::fmt_double(inc.center.x()) + " " + detail::fmt_double(inc.center.y()) + " " +
                 detail::fmt_double(inc.semi_axes.x()) + " " + detail::fmt_double(inc.semi_axes.y()) + " " +
                 detail::fmt_double(inc.orientation) + " " + detail::fmt_double(inc.amplitude) + " " +
                 detail::fmt_double(inc.waveform.frequency) + " " + detail::fmt_double(inc.waveform.phase) + "\n";
        return s;
    }
};

// Two "lungs" losing 30% conductivity at peak inhalation, 0.25 Hz, 9 frames
// per second, 40 frames.
inline Scenario breathing_scenario(double contrast = -0.3, double frequency = 0.25, int frame_count = 40,
                                   double frame_rate = 9.0) {
    Scenario s;
    s.frame_count = frame_count;
    s.frame_period = 1.0 / frame_rate;
    for (double side : {-1.0, 1.0}) {
        Inclusion lung;
        lung.center = Point(0.4 * side, 0.05);
        lung.semi_axes = Eigen::Vector2d(0.22, 0.35);
        lung.amplitude = contrast;
        lung.waveform = Waveform{frequency, 0.0};
        s.inclusions.push_back(lung);
    }
    return s;
}

// Radial boundary displacement amplitude * R * cos(mode * theta) * w(t),
// blended smoothly to zero over the outer 20% of the radius.
struct MotionSpec {
    double amplitude = 0.01; // fraction of the radius
    int mode = 2;
    Waveform waveform;

    void validate() const {
        if (!(amplitude >= 0 && amplitude < 0.05))
            throw InvalidArgument("motion amplitude must lie in [0, 0.05)");
        if (mode < 0) throw InvalidArgument("motion mode must be non-negative");
    }

    std::string canonical_text() const {
        return "motion " + detail::fmt_double(amplitude) + " " + std::to_string(mode) + " " +
               detail::fmt_double(waveform.frequency) + " " + detail::fmt_double(waveform.phase) + "\n";
    }
};

inline bool point_in_polygon(const Mesh &mesh, const Point &p) {
    bool inside = false;
    const auto &loop = mesh.boundary_loop();
    for (std::size_t a = 0, b = loop.size() - 1; a < loop.size(); b = a++) {
        const Point &pa = mesh.node(loop[a]), &pb = mesh.node(loop[b]);
        if ((pa.y() > p.y()) != (pb.y() > p.y()) &&
            p.x() < (pb.x() - pa.x()) * (p.y() - pa.y()) / (pb.y() - pa.y()) + pa.x())
            inside = !inside;
    }
    return inside;
}

inline void validate_scenario(const Scenario &s, const Mesh &mesh) {
    if (s.frame_count < 1) throw InvalidArgument("scenario needs at least one frame");
    if (!(s.frame_period > 0)) throw InvalidArgument("frame period must be positive");
    double worst = 1.0;
    for (const auto &inc : s.inclusions) {
        if (!(inc.semi_axes.x() > 0 && inc.semi_axes.y() > 0))
            throw InvalidArgument("ellipse semi-axes must be positive");
        for (int q = 0; q < 64; ++q)
            if (!point_in_polygon(mesh, inc.boundary_point(2 * std::numbers::pi * q / 64)))
                throw InvalidArgument("inclusion ellipse leaves the domain");
        worst += std::min(0.0, inc.amplitude);
    }
    if (!(worst > 0)) throw InvalidArgument("inclusions can drive the conductivity to zero or below");
}

// sigma(centroid_k, t) per element.
inline Conductivity rasterize_scenario(const Scenario &s, const Mesh &mesh, double t) {
    Eigen::VectorXd v(mesh.num_elements());
    for (int k = 0; k < mesh.num_elements(); ++k) {
        v[k] = s.conductivity_at(mesh.centroid(k), t);
        if (!(v[k] > 0))
            throw ComputeError("scenario gives non-positive conductivity in element " + std::to_string(k));
    }
    return Conductivity(std::move(v));
}

// Copy of mesh with nodes displaced radially about the boundary centroid.
inline Mesh deform_mesh(const Mesh &mesh, const MotionSpec &motion, double t) {
    const auto &loop = mesh.boundary_loop();
    Point centre = Point::Zero();
    for (int v : loop) centre += mesh.node(v);
    centre /= static_cast<double>(loop.size());
    double radius = 0;
    for (int v : loop) radius = std::max(radius, (mesh.node(v) - centre).norm());

    const double scale = motion.amplitude * radius * motion.waveform.value(t);
    std::vector<Point> nodes = mesh.nodes();
    for (auto &p : nodes) {
        const Point d = p - centre;
        const double rho = d.norm();
        if (rho == 0) continue;
        const double x = std::clamp((rho / radius - 0.8) / 0.2, 0.0, 1.0);
        const double blend = x * x * (3.0 - 2.0 * x);
        const double theta = std::atan2(d.y(), d.x());
        p += (scale * std::cos(motion.mode * theta) * blend / rho) * d;
    }
    try {
        return Mesh(std::move(nodes), mesh.triangles());
    } catch (const TopologyError &e) {
        throw ComputeError(std::string("boundary motion inverted the mesh: ") + e.what());
    }
}

namespace detail {

inline std::mt19937_64 frame_rng(std::uint64_t seed, std::size_t frame) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(frame), 0x45495446u};
    return std::mt19937_64(seq);
}

// Gaussian noise with standard deviation noise_level times the RMS of the
// clean time differences against frame 0, pooled over the whole sequence.
// Every frame, the reference included, gets its own stream from the seed.
inline void add_measurement_noise(std::vector<Frame> &frames, double noise_level, std::uint64_t seed) {
    if (noise_level == 0 || frames.empty()) return;
    double sum = 0;
    for (const auto &f : frames) sum += (f.data.values() - frames[0].data.values()).squaredNorm();
    const double rms = std::sqrt(sum / (static_cast<double>(frames.size()) * kDataLength));
    const double sd = noise_level * rms;
    if (sd == 0) return;
    for (std::size_t m = 0; m < frames.size(); ++m) {
        auto rng = frame_rng(seed, m);
        std::normal_distribution<double> gauss(0.0, sd);
        for (int r = 0; r < kDataLength; ++r) frames[m].data[r] += gauss(rng);
    }
}

} // namespace detail

// Full simulation: conductivity scenario, optional boundary motion and
// additive noise, all on refine(coarse).
inline FrameSequence simulate_frames(const Mesh &coarse, const ElectrodeLayout &layout, const Scenario &scenario,
                                     double noise_level, std::uint64_t seed,
                                     const std::optional<MotionSpec> &motion = std::nullopt, int threads = 1) {
    if (!(noise_level >= 0)) throw InvalidArgument("noise level must be non-negative");
    validate_scenario(scenario, coarse);
    if (motion) motion->validate();
    layout.validate(coarse);

    const RefinedMesh fine = refine(coarse);
    const ElectrodeLayout fine_layout = fine.transfer(coarse, layout);

    std::vector<Frame> frames(static_cast<std::size_t>(scenario.frame_count));
    parallel_for(frames.size(), threads, [&](std::size_t m) {
        const double t = scenario.time(static_cast<int>(m));
        const Conductivity sigma = rasterize_scenario(scenario, fine.mesh, t);
        frames[m].time = t;
        if (motion && motion->amplitude > 0)
            frames[m].data = forward_data(deform_mesh(fine.mesh, *motion, t), fine_layout, sigma);
        else
            frames[m].data = forward_data(fine.mesh, fine_layout, sigma);
    });
    detail::add_measurement_noise(frames, noise_level, seed);

    std::string text = scenario.canonical_text();
    if (motion) text += motion->canonical_text();
    FrameProvenance prov{to_hex(sha256(text)).substr(0, 16), seed, to_hex(sha256(mesh_to_string(coarse))).substr(0, 16)};
    return FrameSequence(std::move(frames), std::move(prov));
}

// Pure boundary motion over a homogeneous (sigma = 1) body.
inline FrameSequence simulate_motion_frames(const Mesh &coarse, const ElectrodeLayout &layout, const MotionSpec &motion,
                                            int frame_count, double frame_period, std::uint64_t seed,
                                            double noise_level = 0.0, int threads = 1) {
    Scenario still;
    still.frame_count = frame_count;
    still.frame_period = frame_period;
    return simulate_frames(coarse, layout, still, noise_level, seed, motion, threads);
}

} // namespace eitfer
