// eitfer: command-line driver for the time-difference EIT pipeline.
//
//   eitfer mesh-gen  --radius 1 --edge-length 0.05 [--coverage 0.5] --output mesh.txt
//   eitfer jacobian  --mesh mesh.txt [--coverage 0.5] [--out dir]
//   eitfer phantom   [--config run.cfg] [--binary]
//   eitfer recon     --frames out/frames.txt [--config run.cfg]
//   eitfer pipeline  [--config run.cfg]
//   eitfer render    --mesh mesh.txt --image frame_000.csv --output frame_000.ppm [--range r]
//
// Exit codes: 0 success, 2 config error, 3 compute error, 4 I/O error.

#include "eitfer/eitfer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr const char *kConfigHelp = R"(Config file: one "key = value" per line, '#' comments.
  mesh.path            mesh file (excludes mesh.radius / mesh.edge_length)
  mesh.radius          generated disk radius                      [1]
  mesh.edge_length     generated disk target edge length          [0.05]
  electrodes.coverage  boundary fraction under electrodes         [0.5]
  method               fer | standard                             [fer]
  lambda               positive real, or inf for fer              [inf]
  lambda_b             motion filter lambda, multiple of the
                       largest diagonal of S_bdry^T S_bdry        [0.01]
  motion_filter        true | false                               [true]
  scenario             breathing                                  [breathing]
  scenario.contrast    lung conductivity change at peak inhale    [-0.3]
  scenario.frequency   breathing frequency in Hz                  [0.25]
  scenario.frames      number of frames                           [40]
  scenario.frame_rate  frames per second                          [9]
  motion.amplitude     boundary motion, fraction of the radius    [0]
  motion.mode          angular mode of the boundary motion        [2]
  motion.frequency     boundary motion frequency in Hz            [0.25]
  noise                noise sd as a fraction of the signal RMS   [0.01]
  seed                 noise seed                                 [1]
  reference_frame      frame subtracted from all frames           [0]
  out                  output directory                           [out]
  cache_dir            Jacobian cache directory                   [<out>/cache]
  formats              comma list of csv, ppm                     [csv,ppm]
Exit codes: 0 success, 2 config error, 3 compute error, 4 I/O error.)";

struct GlobalOptions {
    std::string config_path;
    int threads = eitfer::default_thread_count();
    bool no_motion_filter = false;
    std::string lambda;
    std::string lambda_b;
    std::optional<std::uint64_t> seed;
    std::string out;
};

eitfer::PipelineConfig resolve_config(const GlobalOptions &g) {
    return eitfer::run_stage("config", [&] {
        eitfer::PipelineConfig c = g.config_path.empty() ? eitfer::PipelineConfig{} : eitfer::load_config(g.config_path);
        if (!g.lambda.empty()) eitfer::set_config_value(c, "lambda", g.lambda);
        if (!g.lambda_b.empty()) eitfer::set_config_value(c, "lambda_b", g.lambda_b);
        if (g.seed) c.seed = *g.seed;
        if (!g.out.empty()) c.out = g.out;
        if (g.no_motion_filter) c.motion_filter = false;
        c.validate();
        return c;
    });
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Time-difference EIT with fidelity-embedded regularization"};
    app.footer(kConfigHelp);
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--config", g.config_path, "Pipeline config file");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_flag("--no-motion-filter", g.no_motion_filter, "Reconstruct from unfiltered data");
    app.add_option("--lambda", g.lambda, "Regularization parameter (real or inf)");
    app.add_option("--lambda-b", g.lambda_b, "Motion filter parameter (relative)");
    app.add_option("--seed", g.seed, "Noise seed");
    app.add_option("--out", g.out, "Output directory");

    auto *mesh_gen = app.add_subcommand("mesh-gen", "Generate a disk mesh");
    double radius = 1.0, edge = 0.05;
    std::optional<double> gen_coverage;
    std::string mesh_output = "mesh.txt";
    mesh_gen->add_option("--radius", radius, "Disk radius");
    mesh_gen->add_option("--edge-length", edge, "Target edge length");
    mesh_gen->add_option("--coverage", gen_coverage, "Also place 16 electrodes with this coverage");
    mesh_gen->add_option("--output", mesh_output, "Mesh file to write");

    auto *jacobian = app.add_subcommand("jacobian", "Build (or load from cache) the sensitivity matrix");
    std::string mesh_path;
    double coverage = 0.5;
    jacobian->add_option("--mesh", mesh_path, "Mesh file")->required();
    jacobian->add_option("--coverage", coverage, "Electrode coverage when the mesh has no E section");

    auto *phantom = app.add_subcommand("phantom", "Simulate the configured phantom frames");
    bool binary_frames = false;
    phantom->add_flag("--binary", binary_frames, "Also write frames.bin");

    auto *recon = app.add_subcommand("recon", "Reconstruct images from a frame file");
    std::string frames_path;
    recon->add_option("--frames", frames_path, "Frame file (text or binary)")->required();

    auto *pipeline = app.add_subcommand("pipeline", "Run the full pipeline");

    auto *render = app.add_subcommand("render", "Render an image CSV to PPM");
    std::string image_path, ppm_path = "image.ppm", render_mesh;
    std::optional<double> range;
    render->add_option("--mesh", render_mesh, "Mesh file")->required();
    render->add_option("--image", image_path, "Image CSV")->required();
    render->add_option("--output", ppm_path, "PPM file to write");
    render->add_option("--range", range, "Symmetric colour range (default max |value|)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (mesh_gen->parsed()) {
            eitfer::run_stage("mesh", [&] {
                const eitfer::Mesh mesh = eitfer::generate_disk_mesh(radius, edge);
                std::optional<eitfer::ElectrodeLayout> layout;
                if (gen_coverage) layout.emplace(eitfer::assign_electrodes(mesh, *gen_coverage));
                eitfer::save_mesh(mesh_output, mesh, layout ? &*layout : nullptr);
                std::cout << "mesh: " << mesh.num_nodes() << " nodes, " << mesh.num_elements() << " elements -> "
                          << mesh_output << "\n";
            });
        } else if (jacobian->parsed()) {
            eitfer::PipelineConfig c = resolve_config(g);
            c.mesh_path = mesh_path;
            c.coverage = coverage;
            const auto m = eitfer::run_stage("mesh", [&] { return eitfer::setup_mesh(c); });
            const auto r = eitfer::run_stage(
                "jacobian", [&] { return eitfer::build_jacobian_cached(m.mesh, m.layout, c.cache_directory()); });
            std::cout << "jacobian: " << r.matrix.rows() << " x " << r.matrix.cols() << ", "
                      << (r.cache_hit ? "cache hit" : "built and cached") << " in " << r.seconds << " s -> "
                      << r.cache_path << "\n";
        } else if (phantom->parsed()) {
            const eitfer::PipelineConfig c = resolve_config(g);
            const auto m = eitfer::run_stage("mesh", [&] { return eitfer::setup_mesh(c); });
            eitfer::run_stage("phantom", [&] {
                const auto frames = eitfer::simulate_from_config(c, m, g.threads);
                std::filesystem::create_directories(c.out);
                eitfer::write_file(c.out + "/frames.txt", eitfer::frames_to_text(frames));
                if (binary_frames) eitfer::write_file(c.out + "/frames.bin", eitfer::frames_to_binary(frames));
                std::cout << "phantom: " << frames.size() << " frames -> " << c.out << "/frames.txt\n";
            });
        } else if (recon->parsed()) {
            eitfer::PipelineConfig c = resolve_config(g);
            const auto m = eitfer::run_stage("mesh", [&] { return eitfer::setup_mesh(c); });
            const auto frames = eitfer::run_stage("recon", [&] { return eitfer::load_frames(frames_path); });
            if (c.reference_frame >= static_cast<int>(frames.size()))
                throw eitfer::StageError("config", 2, "reference_frame outside the frame file");
            const auto jac = eitfer::run_stage(
                "jacobian", [&] { return eitfer::build_jacobian_cached(m.mesh, m.layout, c.cache_directory()); });
            const auto out = eitfer::reconstruct_sequence(c, m, jac.matrix, frames, g.threads);
            std::cout << "recon: " << out.images.size() << " images -> " << c.out << "\n";
        } else if (pipeline->parsed()) {
            const eitfer::PipelineConfig c = resolve_config(g);
            const auto r = eitfer::run_pipeline(c, g.threads, std::cout);
            std::cout << "pipeline: " << r.files.size() << " files, manifest " << r.manifest_path << "\n";
        } else if (render->parsed()) {
            eitfer::run_stage("render", [&] {
                const auto mesh = eitfer::load_mesh(render_mesh);
                const auto img = eitfer::image_from_csv(eitfer::read_file(image_path));
                eitfer::render_image(img, mesh.mesh, ppm_path, range);
                std::cout << "render: " << ppm_path << "\n";
            });
        }
    } catch (const eitfer::StageError &e) {
        std::cerr << "eitfer: error in stage " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception &e) {
        std::cerr << "eitfer: error: " << e.what() << "\n";
        return eitfer::exit_code_for(e);
    }
    return 0;
}
