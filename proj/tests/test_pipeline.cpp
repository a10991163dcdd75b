#include "support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>

using namespace eitfer;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(const std::string &out) {
    PipelineConfig c;
    c.mesh_edge_length = 0.1;
    c.frames = 3;
    c.out = out;
    return c;
}

struct CliResult {
    int code;
    std::string output;
};

CliResult run_cli(const std::string &args, const std::string &dir) {
    const std::string log = dir + "/cli.log";
    const std::string cmd = "cd '" + dir + "' && '" EITFER_CLI "' " + args + " > cli.log 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, fs::exists(log) ? read_file(log) : ""};
}

// Pixel centre of world point p in the 256 grid over [-1, 1]^2.
std::pair<int, int> pixel_of(const Point &p) {
    const double step = 2.0 / kRasterSize;
    return {static_cast<int>((p.x() + 1) / step), static_cast<int>((1 - p.y()) / step)};
}

Rgb pixel(const std::string &ppm, int px, int py) {
    const std::size_t header = std::string("P6\n256 256\n255\n").size();
    const std::size_t at = header + 3 * (static_cast<std::size_t>(py) * kRasterSize + px);
    return {static_cast<std::uint8_t>(ppm[at]), static_cast<std::uint8_t>(ppm[at + 1]),
            static_cast<std::uint8_t>(ppm[at + 2])};
}

} // namespace

TEST(Colormap, Anchors) {
    EXPECT_EQ(diverging_color(0.0, 1.0), (Rgb{255, 255, 255}));
    EXPECT_EQ(diverging_color(-1.0, 1.0), (Rgb{0, 0, 255}));
    EXPECT_EQ(diverging_color(1.0, 1.0), (Rgb{255, 0, 0}));
    EXPECT_EQ(diverging_color(-0.5, 1.0), (Rgb{128, 128, 255}));
    EXPECT_EQ(diverging_color(0.5, 1.0), (Rgb{255, 128, 128}));
    EXPECT_EQ(diverging_color(-7.0, 2.0), (Rgb{0, 0, 255}));
    EXPECT_EQ(diverging_color(0.3, 0.0), (Rgb{255, 255, 255}));
}

TEST(Render, ZeroImageIsWhite) {
    const auto &d = eitfer::testing::small_disk();
    const std::string ppm = render_ppm(Eigen::VectorXd::Zero(d.mesh.num_elements()), PixelMap(d.mesh));
    ASSERT_EQ(ppm.rfind("P6\n256 256\n255\n", 0), 0u);
    ASSERT_EQ(ppm.size(), 15u + 3u * 256u * 256u);
    for (std::size_t i = 15; i < ppm.size(); ++i) ASSERT_EQ(static_cast<unsigned char>(ppm[i]), 255u);
}

TEST(Render, NegativeBlobIsBlueAtItsLocation) {
    const auto &d = eitfer::testing::standard_disk();
    Inclusion blob;
    blob.center = Point(-0.4, 0.3);
    blob.semi_axes = Eigen::Vector2d(0.2, 0.2);
    Eigen::VectorXd values = Eigen::VectorXd::Zero(d.mesh.num_elements());
    for (int k = 0; k < d.mesh.num_elements(); ++k)
        if (blob.contains(d.mesh.centroid(k))) values[k] = -1.0;
    const std::string ppm = render_ppm(values, PixelMap(d.mesh));

    int blue_inside = 0, blue_outside = 0, inside = 0;
    for (int py = 0; py < kRasterSize; ++py)
        for (int px = 0; px < kRasterSize; ++px) {
            const Point p(-1 + (px + 0.5) * 2.0 / kRasterSize, 1 - (py + 0.5) * 2.0 / kRasterSize);
            const bool blue = pixel(ppm, px, py) == Rgb{0, 0, 255};
            // Stay clear of the jagged element boundary of the mask.
            const double r = (p - blob.center).norm();
            if (r < 0.15) ++inside, blue_inside += blue;
            if (r > 0.28) blue_outside += blue;
        }
    EXPECT_EQ(blue_inside, inside);
    EXPECT_EQ(blue_outside, 0);
    const auto [cx, cy] = pixel_of(blob.center);
    EXPECT_EQ(pixel(ppm, cx, cy), (Rgb{0, 0, 255}));
    EXPECT_EQ(pixel(ppm, 0, 0), (Rgb{255, 255, 255}));
}

TEST(Render, Deterministic) {
    const auto &d = eitfer::testing::small_disk();
    const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(d.mesh.num_elements(), -1, 1);
    const std::string dir = eitfer::testing::scratch_dir("render");
    ConductivityImage img;
    img.values = v;
    render_image(img, d.mesh, dir + "/a.ppm");
    render_image(img, d.mesh, dir + "/b.ppm");
    EXPECT_EQ(read_file(dir + "/a.ppm"), read_file(dir + "/b.ppm"));
    img.values = Eigen::VectorXd::Zero(3);
    EXPECT_THROW(render_image(img, d.mesh, dir + "/c.ppm"), InvalidArgument);
    img.values = v;
    EXPECT_THROW(render_image(img, d.mesh, dir + "/missing/dir/c.ppm"), IoError);
}

TEST(Config, DefaultsAndRoundTrip) {
    const PipelineConfig c = parse_config("# nothing\n\n");
    EXPECT_EQ(c.method, "fer");
    EXPECT_TRUE(std::isinf(c.lambda));
    EXPECT_TRUE(c.motion_filter);
    EXPECT_EQ(c.frames, 40);
    EXPECT_EQ(c.noise, 0.01);
    EXPECT_EQ(c.coverage, 0.5);
    EXPECT_NO_THROW(c.validate());

    const PipelineConfig d = parse_config(
        "method = standard\nlambda = 0.05\nlambda_b = 0.02\nmotion_filter = false\nseed = 77\n"
        "motion.amplitude = 0.01\nformats = csv\nout = somewhere\n");
    EXPECT_EQ(d.method, "standard");
    EXPECT_EQ(d.lambda, 0.05);
    EXPECT_FALSE(d.motion_filter);
    EXPECT_EQ(d.seed, 77u);
    EXPECT_FALSE(d.write_ppm);
    EXPECT_EQ(d.cache_directory(), "somewhere/cache");
    EXPECT_EQ(config_to_text(parse_config(config_to_text(d))), config_to_text(d));
}

TEST(Config, Errors) {
    EXPECT_THROW(parse_config("method = standard\nlambda = inf\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("lambda = 0\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("colour = red\n"), ConfigError);
    EXPECT_THROW(parse_config("lambda = 1\nlambda = 2\n"), ConfigError);
    EXPECT_THROW(parse_config("mesh.path = m.txt\nmesh.radius = 1\n"), ConfigError);
    EXPECT_THROW(parse_config("lambda 1\n"), ConfigError);
    EXPECT_THROW(parse_config("scenario.frames = many\n"), ConfigError);
    EXPECT_THROW(parse_config("motion_filter = maybe\n"), ConfigError);
    EXPECT_THROW(parse_config("formats = gif\n"), ConfigError);
    EXPECT_THROW(parse_config("seed = -3\n"), ConfigError);
    EXPECT_THROW(parse_config("motion.amplitude = 0.06\n").validate(), ConfigError);
    EXPECT_THROW(parse_config("reference_frame = 40\n").validate(), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(Stages, ExitCodes) {
    EXPECT_EQ(exit_code_for(ConfigError("x")), 2);
    EXPECT_EQ(exit_code_for(InvalidArgument("x")), 2);
    EXPECT_EQ(exit_code_for(ComputeError("x")), 3);
    EXPECT_EQ(exit_code_for(TopologyError("x")), 3);
    EXPECT_EQ(exit_code_for(IoError("x")), 4);
    EXPECT_EQ(exit_code_for(ParseError("x")), 4);
    try {
        run_stage("jacobian", [] { throw ComputeError("boom"); });
        FAIL();
    } catch (const StageError &e) {
        EXPECT_EQ(e.stage(), "jacobian");
        EXPECT_EQ(e.exit_code(), 3);
        EXPECT_EQ(std::string(e.what()), "jacobian: boom");
    }
}

TEST(JacobianCache, BuildHitAndRebuildAfterCorruption) {
    const std::string dir = eitfer::testing::scratch_dir("jacobian-cache");
    const Mesh m = generate_disk_mesh(1.0, 0.08);
    const ElectrodeLayout layout = assign_electrodes(m, 0.5);
    const JacobianResult first = build_jacobian_cached(m, layout, dir);
    EXPECT_FALSE(first.cache_hit);
    EXPECT_EQ(first.matrix.rows(), 208);
    const JacobianResult second = build_jacobian_cached(m, layout, dir);
    EXPECT_TRUE(second.cache_hit);
    EXPECT_EQ(second.cache_path, first.cache_path);
    EXPECT_TRUE(second.matrix.matrix() == first.matrix.matrix());

    std::string bytes = read_file(first.cache_path);
    bytes[bytes.size() - 5] ^= 0x01;
    write_file(first.cache_path, bytes);
    const JacobianResult third = build_jacobian_cached(m, layout, dir);
    EXPECT_FALSE(third.cache_hit);
    EXPECT_TRUE(third.matrix.matrix() == first.matrix.matrix());
    EXPECT_TRUE(build_jacobian_cached(m, layout, dir).cache_hit);

    const JacobianResult other = build_jacobian_cached(m, assign_electrodes(m, 0.9), dir);
    EXPECT_FALSE(other.cache_hit);
    EXPECT_NE(other.cache_path, first.cache_path);
}

TEST(Pipeline, WritesImagesAndManifest) {
    const std::string dir = eitfer::testing::scratch_dir("pipeline");
    std::ostringstream log;
    const PipelineResult r = run_pipeline(small_config(dir), 2, log);
    EXPECT_EQ(r.frames, 3u);
    for (int f = 0; f < 3; ++f) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "/frame_%03d", f);
        EXPECT_TRUE(fs::exists(dir + stem + ".csv"));
        EXPECT_TRUE(fs::exists(dir + stem + ".ppm"));
    }
    const ConductivityImage img = image_from_csv(read_file(dir + "/frame_002.csv"));
    EXPECT_EQ(img.values.size(), static_cast<Eigen::Index>(r.elements));
    EXPECT_EQ(img.frame, 2);
    EXPECT_TRUE(img.lambda_b.has_value());
    EXPECT_EQ(image_from_csv(read_file(dir + "/frame_000.csv")).values.cwiseAbs().maxCoeff(), 0.0);
    const std::string manifest = read_file(r.manifest_path);
    for (const char *needle : {"[config]", "[hashes]", "[outputs]", "[timings_seconds]", "frame_002.ppm"})
        EXPECT_NE(manifest.find(needle), std::string::npos) << needle;
    EXPECT_FALSE(r.cache_hit);
    EXPECT_TRUE(run_pipeline(small_config(dir), 1, log).cache_hit);
}

TEST(Pipeline, StageErrorsCarryExitCodes) {
    const std::string dir = eitfer::testing::scratch_dir("pipeline-errors");
    std::ostringstream log;
    PipelineConfig bad = small_config(dir);
    bad.method = "standard";
    try {
        run_pipeline(bad, 1, log);
        FAIL();
    } catch (const StageError &e) {
        EXPECT_EQ(e.stage(), "config");
        EXPECT_EQ(e.exit_code(), 2);
    }
    PipelineConfig missing = small_config(dir);
    missing.mesh_path = dir + "/no-such-mesh.txt";
    try {
        run_pipeline(missing, 1, log);
        FAIL();
    } catch (const StageError &e) {
        EXPECT_EQ(e.stage(), "mesh");
        EXPECT_EQ(e.exit_code(), 4);
    }
}

TEST(Cli, SubcommandsAndExitCodes) {
    const std::string dir = eitfer::testing::scratch_dir("cli");
    EXPECT_EQ(run_cli("--help", dir).code, 0);
    EXPECT_EQ(run_cli("", dir).code, 2);
    EXPECT_EQ(run_cli("frobnicate", dir).code, 2);

    auto gen = run_cli("mesh-gen --radius 1 --edge-length 0.12 --output disk.txt", dir);
    ASSERT_EQ(gen.code, 0) << gen.output;
    auto jac = run_cli("jacobian --mesh disk.txt --coverage 0.5 --out jout", dir);
    ASSERT_EQ(jac.code, 0) << jac.output;
    EXPECT_NE(jac.output.find("208 x "), std::string::npos) << jac.output;
    EXPECT_NE(jac.output.find("built"), std::string::npos) << jac.output;
    jac = run_cli("jacobian --mesh disk.txt --out jout", dir);
    EXPECT_NE(jac.output.find("cache hit"), std::string::npos) << jac.output;

    write_file(dir + "/run.cfg", "mesh.path = disk.txt\nscenario.frames = 3\nout = run\n");
    auto pipe = run_cli("pipeline --config run.cfg --threads 2", dir);
    ASSERT_EQ(pipe.code, 0) << pipe.output;
    EXPECT_TRUE(fs::exists(dir + "/run/frame_002.ppm"));
    EXPECT_TRUE(fs::exists(dir + "/run/manifest.txt"));

    auto phantom = run_cli("phantom --config run.cfg --out ph --binary", dir);
    ASSERT_EQ(phantom.code, 0) << phantom.output;
    auto recon = run_cli("recon --config run.cfg --frames ph/frames.bin --lambda 0.2 --out rec", dir);
    ASSERT_EQ(recon.code, 0) << recon.output;
    EXPECT_EQ(image_from_csv(read_file(dir + "/rec/frame_001.csv")).lambda, 0.2);
    auto render = run_cli("render --mesh disk.txt --image rec/frame_001.csv --output one.ppm", dir);
    ASSERT_EQ(render.code, 0) << render.output;
    EXPECT_EQ(read_file(dir + "/one.ppm").size(), 15u + 3u * 256u * 256u);

    auto bad = run_cli("pipeline --config run.cfg --lambda inf --out x", dir);
    EXPECT_EQ(bad.code, 0) << bad.output;
    write_file(dir + "/std.cfg", "method = standard\n");
    bad = run_cli("pipeline --config std.cfg", dir);
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.output.find("config"), std::string::npos) << bad.output;
    EXPECT_EQ(std::count(bad.output.begin(), bad.output.end(), '\n'), 1) << bad.output;
    bad = run_cli("jacobian --mesh nowhere.txt", dir);
    EXPECT_EQ(bad.code, 4);
    write_file(dir + "/broken.txt", "N 3\n0 0\n1 0\n2 0\nT 1\n0 1 2\n");
    bad = run_cli("jacobian --mesh broken.txt", dir);
    EXPECT_EQ(bad.code, 3);
    bad = run_cli("pipeline --no-motion-filter --lambda -1", dir);
    EXPECT_EQ(bad.code, 2);
}
