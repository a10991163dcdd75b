#pragma once
// End-to-end orchestration: configuration, cached Jacobian construction,
// phantom simulation, filtering, reconstruction and image output.

#include "eitfer/phantom.hpp"
#include "eitfer/recon.hpp"
#include "eitfer/render.hpp"
#include "eitfer/sensitivity.hpp"

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace eitfer {

////////////////////////////////////////////////////////////////////////////////
// PipelineConfig
//
// Flat "key = value" text, one per line, '#' comments. Keys:
//
//   mesh.path            mesh file; excludes mesh.radius / mesh.edge_length
//   mesh.radius          generated disk radius                     [1]
//   mesh.edge_length     generated disk target edge length         [0.05]
//   electrodes.coverage  boundary fraction under electrodes        [0.5]
//   method               fer | standard                            [fer]
//   lambda               positive real or inf (inf: fer only)      [inf]
//   lambda_b             motion-filter lambda as a multiple of
//                        max diag(S_bdry^T S_bdry)                 [0.01]
//   motion_filter        true | false                              [true]
//   scenario             breathing                                 [breathing]
//   scenario.contrast    lung conductivity change at peak inhale   [-0.3]
//   scenario.frequency   breathing frequency, Hz                   [0.25]
//   scenario.frames      frame count                               [40]
//   scenario.frame_rate  frames per second                         [9]
//   motion.amplitude     boundary motion, fraction of radius       [0]
//   motion.mode          angular mode of the boundary motion       [2]
//   motion.frequency     motion frequency, Hz                      [0.25]
//   noise                noise sd relative to the signal RMS       [0.01]
//   seed                 u64 noise seed                            [1]
//   reference_frame      frame subtracted from every frame         [0]
//   out                  output directory                          [out]
//   cache_dir            Jacobian cache directory                  [<out>/cache]
//   formats              comma list of csv, ppm                    [csv,ppm]
////////////////////////////////////////////////////////////////////////////////
struct PipelineConfig {
    std::optional<std::string> mesh_path;
    double mesh_radius = 1.0;
    double mesh_edge_length = 0.05;
    double coverage = 0.5;
    std::string method = "fer";
    double lambda = kInfiniteLambda;
    double lambda_b = 0.01;
    bool motion_filter = true;
    std::string scenario = "breathing";
    double contrast = -0.3;
    double frequency = 0.25;
    int frames = 40;
    double frame_rate = 9.0;
    double motion_amplitude = 0.0;
    int motion_mode = 2;
    double motion_frequency = 0.25;
    double noise = 0.01;
    std::uint64_t seed = 1;
    int reference_frame = 0;
    std::string out = "out";
    std::optional<std::string> cache_dir;
    bool write_csv = true;
    bool write_ppm = true;

    std::string cache_directory() const { return cache_dir ? *cache_dir : out + "/cache"; }

    void validate() const {
        if (method != "fer" && method != "standard")
            throw ConfigError("method must be 'fer' or 'standard', got '" + method + "'");
        if (std::isnan(lambda) || lambda <= 0) throw ConfigError("lambda must be positive or inf");
        if (method == "standard" && std::isinf(lambda))
            throw ConfigError("method=standard needs a finite lambda; inf is only defined for fer");
        if (!(lambda_b > 0) || std::isinf(lambda_b)) throw ConfigError("lambda_b must be positive and finite");
        if (!(coverage > 0 && coverage < 1)) throw ConfigError("electrodes.coverage must lie in (0, 1)");
        if (!mesh_path && (!(mesh_radius > 0) || !(mesh_edge_length > 0) || !(mesh_edge_length < mesh_radius)))
            throw ConfigError("mesh.radius and mesh.edge_length must satisfy 0 < edge_length < radius");
        if (scenario != "breathing") throw ConfigError("unknown scenario '" + scenario + "'");
        if (frames < 1) throw ConfigError("scenario.frames must be at least 1");
        if (!(frame_rate > 0)) throw ConfigError("scenario.frame_rate must be positive");
        if (!(motion_amplitude >= 0 && motion_amplitude < 0.05))
            throw ConfigError("motion.amplitude must lie in [0, 0.05)");
        if (!(noise >= 0)) throw ConfigError("noise must be non-negative");
        if (reference_frame < 0 || reference_frame >= frames)
            throw ConfigError("reference_frame must index an existing frame");
    }

    std::string lambda_text() const { return format_lambda(lambda); }
};

namespace detail {

inline std::string trim(const std::string &s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

inline double parse_real(const std::string &key, const std::string &v) {
    if (v == "inf") return kInfiniteLambda;
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception &) {
    }
    throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline long long parse_integer(const std::string &key, const std::string &v) {
    try {
        std::size_t used = 0;
        const long long i = std::stoll(v, &used);
        if (used == v.size()) return i;
    } catch (const std::exception &) {
    }
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

inline bool parse_bool(const std::string &key, const std::string &v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

} // namespace detail

// Apply one key; throws ConfigError for unknown keys or bad values.
inline void set_config_value(PipelineConfig &c, const std::string &key, const std::string &value) {
    using namespace detail;
    if (key == "mesh.path") c.mesh_path = value;
    else if (key == "mesh.radius") c.mesh_radius = parse_real(key, value);
    else if (key == "mesh.edge_length") c.mesh_edge_length = parse_real(key, value);
    else if (key == "electrodes.coverage") c.coverage = parse_real(key, value);
    else if (key == "method") c.method = value;
    else if (key == "lambda") c.lambda = parse_real(key, value);
    else if (key == "lambda_b") c.lambda_b = parse_real(key, value);
    else if (key == "motion_filter") c.motion_filter = parse_bool(key, value);
    else if (key == "scenario") c.scenario = value;
    else if (key == "scenario.contrast") c.contrast = parse_real(key, value);
    else if (key == "scenario.frequency") c.frequency = parse_real(key, value);
    else if (key == "scenario.frames") c.frames = static_cast<int>(parse_integer(key, value));
    else if (key == "scenario.frame_rate") c.frame_rate = parse_real(key, value);
    else if (key == "motion.amplitude") c.motion_amplitude = parse_real(key, value);
    else if (key == "motion.mode") c.motion_mode = static_cast<int>(parse_integer(key, value));
    else if (key == "motion.frequency") c.motion_frequency = parse_real(key, value);
    else if (key == "noise") c.noise = parse_real(key, value);
    else if (key == "seed") {
        const long long s = parse_integer(key, value);
        if (s < 0) throw ConfigError("seed must be non-negative");
        c.seed = static_cast<std::uint64_t>(s);
    } else if (key == "reference_frame") c.reference_frame = static_cast<int>(parse_integer(key, value));
    else if (key == "out") c.out = value;
    else if (key == "cache_dir") c.cache_dir = value;
    else if (key == "formats") {
        c.write_csv = c.write_ppm = false;
        std::istringstream ss(value);
        std::string f;
        while (std::getline(ss, f, ',')) {
            f = trim(f);
            if (f == "csv") c.write_csv = true;
            else if (f == "ppm") c.write_ppm = true;
            else throw ConfigError("formats: unknown format '" + f + "'");
        }
    } else {
        throw ConfigError("unknown config key '" + key + "'");
    }
}

inline PipelineConfig parse_config(const std::string &text) {
    PipelineConfig c;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
        if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
        set_config_value(c, key, value);
    }
    if (seen.count("mesh.path") && (seen.count("mesh.radius") || seen.count("mesh.edge_length")))
        throw ConfigError("give exactly one mesh source: mesh.path or mesh.radius/mesh.edge_length");
    return c;
}

inline PipelineConfig load_config(const std::string &path) {
    std::ifstream probe(path);
    if (!probe) throw ConfigError("cannot open config file " + path);
    return parse_config(read_file(path));
}

inline std::string config_to_text(const PipelineConfig &c) {
    std::string s;
    auto kv = [&](const std::string &k, const std::string &v) { s += k + " = " + v + "\n"; };
    if (c.mesh_path) kv("mesh.path", *c.mesh_path);
    else {
        kv("mesh.radius", detail::fmt_double(c.mesh_radius));
        kv("mesh.edge_length", detail::fmt_double(c.mesh_edge_length));
    }
    kv("electrodes.coverage", detail::fmt_double(c.coverage));
    kv("method", c.method);
    kv("lambda", c.lambda_text());
    kv("lambda_b", detail::fmt_double(c.lambda_b));
    kv("motion_filter", c.motion_filter ? "true" : "false");
    kv("scenario", c.scenario);
    kv("scenario.contrast", detail::fmt_double(c.contrast));
    kv("scenario.frequency", detail::fmt_double(c.frequency));
    kv("scenario.frames", std::to_string(c.frames));
    kv("scenario.frame_rate", detail::fmt_double(c.frame_rate));
    kv("motion.amplitude", detail::fmt_double(c.motion_amplitude));
    kv("motion.mode", std::to_string(c.motion_mode));
    kv("motion.frequency", detail::fmt_double(c.motion_frequency));
    kv("noise", detail::fmt_double(c.noise));
    kv("seed", std::to_string(c.seed));
    kv("reference_frame", std::to_string(c.reference_frame));
    kv("out", c.out);
    kv("cache_dir", c.cache_directory());
    kv("formats", std::string(c.write_csv ? "csv" : "") + (c.write_csv && c.write_ppm ? "," : "") +
                      (c.write_ppm ? "ppm" : ""));
    return s;
}

////////////////////////////////////////////////////////////////////////////////
// Stage errors: a failure tagged with the pipeline stage and its exit code
// (2 config, 3 compute, 4 I/O).
////////////////////////////////////////////////////////////////////////////////
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, int exit_code, const std::string &what)
        : std::runtime_error(stage + ": " + what), m_stage(std::move(stage)), m_exit_code(exit_code) {}
    const std::string &stage() const { return m_stage; }
    int exit_code() const { return m_exit_code; }

private:
    std::string m_stage;
    int m_exit_code;
};

inline int exit_code_for(const std::exception &e) {
    if (dynamic_cast<const ConfigError *>(&e)) return 2;
    if (dynamic_cast<const IoError *>(&e)) return 4;
    if (dynamic_cast<const std::filesystem::filesystem_error *>(&e)) return 4;
    return 3;
}

template <class Fn>
auto run_stage(const std::string &stage, Fn &&fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError &) {
        throw;
    } catch (const std::exception &e) {
        throw StageError(stage, exit_code_for(e), e.what());
    }
}

////////////////////////////////////////////////////////////////////////////////
// Building blocks
////////////////////////////////////////////////////////////////////////////////
struct MeshSetup {
    Mesh mesh;
    ElectrodeLayout layout;
};

// Loaded meshes keep their own electrode section when present.
inline MeshSetup setup_mesh(const PipelineConfig &c) {
    if (c.mesh_path) {
        MeshFile f = load_mesh(*c.mesh_path);
        ElectrodeLayout layout = f.electrodes ? *f.electrodes : assign_electrodes(f.mesh, c.coverage);
        return {std::move(f.mesh), std::move(layout)};
    }
    Mesh mesh = generate_disk_mesh(c.mesh_radius, c.mesh_edge_length);
    ElectrodeLayout layout = assign_electrodes(mesh, c.coverage);
    return {std::move(mesh), std::move(layout)};
}

struct JacobianResult {
    SensitivityMatrix matrix;
    bool cache_hit = false;
    std::string cache_path;
    std::string key_hash;
    double seconds = 0;
};

// Sensitivity matrix at sigma_ref = 1, content-addressed under cache_dir.
// A missing, mismatched or damaged cache is rebuilt and rewritten.
inline JacobianResult build_jacobian_cached(const Mesh &mesh, const ElectrodeLayout &layout, const std::string &cache_dir) {
    const auto start = std::chrono::steady_clock::now();
    const std::string key = sensitivity_cache_key(mesh, layout, 1.0);
    JacobianResult r;
    r.key_hash = to_hex(sha256(key));
    std::filesystem::create_directories(cache_dir);
    r.cache_path = cache_dir + "/jacobian-" + r.key_hash.substr(0, 16) + ".eits";
    if (auto cached = load_sensitivity_cache(r.cache_path, key)) {
        r.matrix = std::move(*cached);
        r.cache_hit = true;
    } else {
        r.matrix = assemble_sensitivity(mesh, solve_all(mesh, layout, Conductivity::uniform(mesh.num_elements())));
        save_sensitivity_cache(r.cache_path, r.matrix, key);
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
}

inline Scenario scenario_from_config(const PipelineConfig &c) {
    return breathing_scenario(c.contrast, c.frequency, c.frames, c.frame_rate);
}

inline std::optional<MotionSpec> motion_from_config(const PipelineConfig &c) {
    if (c.motion_amplitude == 0) return std::nullopt;
    return MotionSpec{c.motion_amplitude, c.motion_mode, Waveform{c.motion_frequency, 0.0}};
}

inline FrameSequence simulate_from_config(const PipelineConfig &c, const MeshSetup &m, int threads) {
    return simulate_frames(m.mesh, m.layout, scenario_from_config(c), c.noise, c.seed, motion_from_config(c), threads);
}

struct ReconstructionOutput {
    std::vector<ConductivityImage> images;
    std::vector<std::string> files;
    double range = 0;
};

// Filter (when enabled), reconstruct every frame against the reference
// frame, and write frame_NNN.csv / frame_NNN.ppm into c.out. The raster
// colour range is max |value| over the whole sequence.
inline ReconstructionOutput reconstruct_sequence(const PipelineConfig &c, const MeshSetup &m, const SensitivityMatrix &s,
                                                 const FrameSequence &frames, int threads) {
    ReconstructionOutput out;
    const auto vdots = run_stage("recon", [&] { return time_difference(frames, static_cast<std::size_t>(c.reference_frame)); });

    std::optional<MotionFilter> filter;
    std::function<Eigen::VectorXd(const DataVector &)> apply;
    std::optional<FerReconstructor> fer;
    std::optional<StandardReconstructor> standard;
    run_stage("recon", [&] {
        if (c.motion_filter) {
            const auto sb = boundary_submatrix(s, boundary_elements(m.mesh));
            filter.emplace(sb, c.lambda_b * sb.entries.colwise().squaredNorm().maxCoeff());
        }
        if (c.method == "fer") fer.emplace(s, build_fidelity_regularizer(s), c.lambda);
        else standard.emplace(s, c.lambda);
    });

    out.images.resize(vdots.size());
    run_stage("recon", [&] {
        parallel_for(vdots.size(), threads, [&](std::size_t f) {
            const DataVector v = filter ? filter->apply(vdots[f]).filtered : vdots[f];
            ConductivityImage img = fer ? fer->reconstruct(v) : standard->reconstruct(v);
            if (filter) img.lambda_b = filter->lambda_b();
            img.frame = static_cast<int>(f);
            img.timestamp = frames[f].time;
            out.images[f] = std::move(img);
        });
    });
    for (const auto &img : out.images)
        if (img.values.size()) out.range = std::max(out.range, img.values.cwiseAbs().maxCoeff());

    run_stage("render", [&] {
        std::filesystem::create_directories(c.out);
        std::optional<PixelMap> pixels;
        if (c.write_ppm) pixels.emplace(m.mesh);
        for (const auto &img : out.images) {
            char stem[32];
            std::snprintf(stem, sizeof(stem), "frame_%03d", img.frame);
            if (c.write_csv) {
                const std::string path = c.out + "/" + stem + ".csv";
                write_file(path, image_to_csv(img));
                out.files.push_back(path);
            }
            if (c.write_ppm) {
                const std::string path = c.out + "/" + stem + ".ppm";
                write_file(path, render_ppm(img.values, *pixels, out.range));
                out.files.push_back(path);
            }
        }
    });
    return out;
}

struct PipelineResult {
    std::size_t elements = 0;
    std::size_t frames = 0;
    bool cache_hit = false;
    std::vector<std::string> files;
    std::string manifest_path;
};

// Whole pipeline; every failure surfaces as a StageError.
inline PipelineResult run_pipeline(const PipelineConfig &c, int threads, std::ostream &log) {
    using clock = std::chrono::steady_clock;
    std::vector<std::pair<std::string, double>> timings;
    auto timed = [&](const std::string &stage, auto &&fn) {
        const auto t0 = clock::now();
        auto r = run_stage(stage, fn);
        timings.emplace_back(stage, std::chrono::duration<double>(clock::now() - t0).count());
        return r;
    };

    run_stage("config", [&] { c.validate(); });
    const MeshSetup m = timed("mesh", [&] { return setup_mesh(c); });
    log << "mesh: " << m.mesh.num_nodes() << " nodes, " << m.mesh.num_elements() << " elements\n";
    const JacobianResult jac = timed("jacobian", [&] { return build_jacobian_cached(m.mesh, m.layout, c.cache_directory()); });
    log << "jacobian: " << jac.matrix.rows() << " x " << jac.matrix.cols() << (jac.cache_hit ? " (cache hit)" : " (built)")
        << "\n";
    const FrameSequence frames = timed("phantom", [&] { return simulate_from_config(c, m, threads); });
    log << "phantom: " << frames.size() << " frames\n";
    run_stage("phantom", [&] {
        std::filesystem::create_directories(c.out);
        write_file(c.out + "/frames.txt", frames_to_text(frames));
    });
    const auto t0 = clock::now();
    const ReconstructionOutput rec = reconstruct_sequence(c, m, jac.matrix, frames, threads);
    timings.emplace_back("recon+render", std::chrono::duration<double>(clock::now() - t0).count());
    log << "recon: " << rec.images.size() << " images (" << c.method << ", lambda=" << c.lambda_text() << ")\n";

    PipelineResult result;
    result.elements = static_cast<std::size_t>(m.mesh.num_elements());
    result.frames = frames.size();
    result.cache_hit = jac.cache_hit;
    result.files = rec.files;
    result.files.push_back(c.out + "/frames.txt");
    result.manifest_path = c.out + "/manifest.txt";

    run_stage("manifest", [&] {
        std::string man = "# eitfer run manifest\n[config]\n" + config_to_text(c);
        man += "[hashes]\n";
        man += "mesh = " + to_hex(sha256(mesh_to_string(m.mesh, &m.layout))) + "\n";
        man += "jacobian_key = " + jac.key_hash + "\n";
        man += "scenario = " + frames.provenance().scenario_hash + "\n";
        man += "noise_seed = " + std::to_string(frames.provenance().seed) + "\n";
        man += "[outputs]\n";
        for (const auto &f : result.files) man += to_hex(sha256(read_file(f))) + "  " + f + "\n";
        man += "[timings_seconds]\n";
        for (const auto &[stage, sec] : timings) man += stage + " = " + detail::fmt_double(sec) + "\n";
        write_file(result.manifest_path, man);
    });
    return result;
}

} // namespace eitfer
