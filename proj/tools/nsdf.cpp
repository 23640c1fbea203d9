// Command-line front end: synth, fit, extract-mesh, eval-geom, eval-renders, serve-toy-oracle.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "nsdf/mesh/evaluation.hpp"
#include "nsdf/mesh/mesh.hpp"
#include "nsdf/scene/pipeline.hpp"
#include "nsdf/scene/scene.hpp"
#include "nsdf/sds/protocol.hpp"
#include "nsdf/sds/sds.hpp"
#include "nsdf/trainer/trainer.hpp"

namespace fs = std::filesystem;
using namespace nsdf;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string log_level = "info";
};

Vec3 parse_rgb(const std::vector<double>& v) {
  require(v.size() == 3, "color needs three components");
  for (double c : v) require(c >= 0.0 && c <= 1.0, "color components must lie in [0, 1]");
  return {v[0], v[1], v[2]};
}

void run_synth(const Globals& g, const fs::path& out, scene::SynthOptions o) {
  if (g.seed) o.seed = *g.seed;
  const scene::Scene s = scene::synth_scene(out, o);
  spdlog::info("wrote scene '{}' with {} visible and {} unobserved views to {}", s.manifest.name,
               s.views.visible.size(), s.views.unobserved.size(), out.string());
}

void run_fit(const Globals& g, const fs::path& scene_dir, const std::optional<fs::path>& config_path,
             const fs::path& out, const std::string& preset, const std::optional<std::string>& ablation,
             const std::optional<fs::path>& resume) {
  trainer::TrainConfig base;
  if (preset == "toy") {
    base = trainer::toy_config();
  } else {
    require(preset == "default", "unknown preset '" + preset + "' (expected default or toy)");
  }
  trainer::TrainConfig config = config_path ? trainer::load_config(*config_path, base) : base;
  if (ablation) trainer::apply_ablation(config, *ablation);
  if (g.seed) config.seed = *g.seed;
  config.threads = g.threads;
  config.validate();

  const scene::Scene s = scene::load_scene(scene_dir);
  std::unique_ptr<sds::GuidanceOracle> oracle;
  if (config.use_sds) oracle = trainer::make_oracle(config);
  const trainer::FitResult r = trainer::fit(config, s.views, oracle.get(), out, resume);
  spdlog::info("fit finished: {} iterations in {:.1f} s, checkpoint {}", r.records.size(), r.seconds,
               r.final_checkpoint.string());
}

void run_extract(const fs::path& checkpoint, const fs::path& out, int resolution, double bound) {
  const mesh::TriangleMesh m = scene::extract_from_checkpoint(checkpoint, resolution, bound);
  mesh::write_mesh(out, m);
  spdlog::info("extracted {} triangles to {}", m.triangle_count(), out.string());
}

void run_eval_geom(const std::optional<fs::path>& reference_path, const fs::path& recon_path,
                   const std::optional<fs::path>& scene_dir, const std::optional<fs::path>& out,
                   mesh::EvalOptions options, const Globals& g) {
  if (g.seed) options.seed = *g.seed;
  std::optional<mesh::TriangleMesh> reference;
  std::vector<render::Camera> cameras;
  if (scene_dir) {
    const scene::Scene s = scene::load_scene(*scene_dir);
    for (const auto& v : s.views.visible) cameras.push_back(v.camera);
    if (!reference_path) reference = scene::load_reference_mesh(*scene_dir, s.manifest);
  }
  if (reference_path) reference = mesh::read_mesh(*reference_path);
  require(reference.has_value(), "eval-geom: no reference mesh (pass --reference or a scene that names one)");
  const mesh::MetricsReport report =
      scene::evaluate_against(std::move(*reference), mesh::read_mesh(recon_path), cameras, options);
  const std::string text = report.to_json();
  if (out) {
    std::ofstream f(*out);
    f << text << '\n';
    if (!f) throw RuntimeError("cannot write " + out->string());
  }
  std::cout << text << '\n';
}

void run_eval_renders(const fs::path& mesh_path, const std::optional<fs::path>& scene_dir,
                      const std::optional<fs::path>& reference_path, const fs::path& out,
                      scene::EvalRenderOptions options) {
  const mesh::TriangleMesh m = mesh::read_mesh(mesh_path);
  std::optional<mesh::TriangleMesh> reference;
  std::vector<render::Camera> cameras;
  if (scene_dir) {
    const scene::Scene s = scene::load_scene(*scene_dir);
    for (const auto& v : s.views.visible) cameras.push_back(v.camera);
    if (!reference_path) reference = scene::load_reference_mesh(*scene_dir, s.manifest);
  }
  if (reference_path) reference = mesh::read_mesh(*reference_path);
  if (reference && !cameras.empty()) {
    *reference = mesh::cleanup(*reference);
    reference->visible = mesh::mark_visible(*reference, cameras);
  }
  const scene::EvalRenderSet set = scene::write_eval_renders(m, reference, out, options);
  spdlog::info("eval-renders: kept {} of {} views in {}", set.selection.kept.size(), set.cameras.size(),
               out.string());
}

sds::GuidanceServer* g_server = nullptr;

void stop_server(int) {
  if (g_server != nullptr) g_server->stop();
}

void run_serve(const std::string& host, int port, double mean, double cov_scale, const Globals& g) {
  auto predictor = std::make_shared<sds::ToyGaussianPredictor>(mean, cov_scale);
  sds::LocalGuidance oracle(predictor, "toy-gaussian", g.seed.value_or(0));
  sds::GuidanceServer server(oracle);
  const int bound = server.bind(host, port);
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  std::cout << "listening on http://" << host << ':' << bound << std::endl;
  server.listen();
  g_server = nullptr;
}

spdlog::level::level_enum parse_level(const std::string& s) {
  const auto level = spdlog::level::from_str(s);
  require(level != spdlog::level::off || s == "off", "unknown log level '" + s + "'");
  return level;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural SDF reconstruction with diffusion guidance for unobserved regions"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed_value = 0;
  auto* seed_opt = app.add_option("--seed", seed_value, "Override every seed (config, synth, sampling)");
  app.add_option("--threads", g.threads, "Worker threads for rendering")->check(CLI::PositiveNumber);
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error, critical, off");

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic scene from an analytic shape");
  scene::SynthOptions so;
  fs::path synth_out;
  synth->add_option("--out", synth_out, "Scene directory")->required();
  synth->add_option("--shape", so.shape, "sphere:r | box:hx,hy,hz | torus:R,r | union:<a>|<b>");
  synth->add_option("--visible", so.n_visible, "Visible views on the +z hemisphere");
  synth->add_option("--unobserved", so.n_unobserved, "Guidance views on the -z hemisphere");
  synth->add_option("--resolution", so.resolution, "Image side in pixels");
  synth->add_option("--mesh-resolution", so.mesh_resolution, "Marching cubes grid for the reference mesh");
  synth->add_option("--prompt", so.prompt_base, "Prompt for guidance");

  // fit
  auto* fit = app.add_subcommand("fit", "Train the fields on a scene");
  fs::path fit_scene, fit_out;
  std::optional<fs::path> fit_config, fit_resume;
  std::optional<std::string> fit_ablation;
  std::string preset = "default";
  fit->add_option("--scene", fit_scene, "Scene directory")->required();
  fit->add_option("--config", fit_config, "key = value config file (overrides the preset)");
  fit->add_option("--out", fit_out, "Run directory")->required();
  fit->add_option("--ablation", fit_ablation, "neus | neus-sds | +normals | +frozen | +multiview");
  fit->add_option("--preset", preset, "Base settings before the config file: default or toy");
  fit->add_option("--resume", fit_resume, "Continue from a training checkpoint");

  // extract-mesh
  auto* extract = app.add_subcommand("extract-mesh", "Marching cubes on a trained SDF");
  fs::path ckpt, mesh_out;
  int mc_res = 256;
  double bound = 1.0;
  extract->add_option("--checkpoint", ckpt, "Training checkpoint")->required();
  extract->add_option("--out", mesh_out, "Output .obj or .ply")->required();
  extract->add_option("--resolution", mc_res, "Grid cells per axis");
  extract->add_option("--bound", bound, "Half side of the extraction cube");

  // eval-geom
  auto* eval = app.add_subcommand("eval-geom", "Precision, recall, F-score and visible-part recall");
  std::optional<fs::path> eval_ref, eval_scene, eval_out;
  fs::path eval_recon;
  mesh::EvalOptions eo;
  bool keep_all = false;
  eval->add_option("--reference", eval_ref, "Reference mesh (default: the scene's)");
  eval->add_option("--recon", eval_recon, "Reconstructed mesh")->required();
  eval->add_option("--scene", eval_scene, "Scene whose visible cameras flag the reference");
  eval->add_option("--threshold", eo.threshold, "Distance threshold after normalization");
  eval->add_option("--spacing", eo.spacing, "Resampling spacing after normalization");
  eval->add_flag("--all-components", keep_all, "Do not reduce the reconstruction to its largest component");
  eval->add_option("--out", eval_out, "Also write the JSON report here");

  // eval-renders
  auto* renders = app.add_subcommand("eval-renders", "Shaded orthographic renders of the unobserved side");
  fs::path render_mesh, render_out;
  std::optional<fs::path> render_scene, render_ref;
  scene::EvalRenderOptions ro;
  std::vector<double> color = {ro.color.x(), ro.color.y(), ro.color.z()};
  renders->add_option("--mesh", render_mesh, "Mesh to render")->required();
  renders->add_option("--out", render_out, "Output directory")->required();
  renders->add_option("--scene", render_scene, "Scene whose visible cameras flag the reference");
  renders->add_option("--reference", render_ref, "Reference mesh used for view filtering");
  renders->add_option("--views", ro.views, "Number of Fibonacci-sphere views");
  renders->add_option("--resolution", ro.resolution, "Image side in pixels");
  renders->add_option("--color", color, "Diffuse color r g b in [0, 1]")->expected(3);

  // serve-toy-oracle
  auto* serve = app.add_subcommand("serve-toy-oracle", "HTTP guidance server backed by the Gaussian toy model");
  std::string host = "127.0.0.1";
  int port = 8765;
  double mean = 0.5, cov_scale = 0.5;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)");
  serve->add_option("--mean", mean, "Gaussian mean per pixel");
  serve->add_option("--cov-scale", cov_scale, "Gaussian standard deviation per pixel");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    spdlog::set_level(parse_level(g.log_level));
    if (seed_opt->count() > 0) g.seed = seed_value;
    if (synth->parsed()) {
      run_synth(g, synth_out, so);
    } else if (fit->parsed()) {
      run_fit(g, fit_scene, fit_config, fit_out, preset, fit_ablation, fit_resume);
    } else if (extract->parsed()) {
      run_extract(ckpt, mesh_out, mc_res, bound);
    } else if (eval->parsed()) {
      eo.keep_largest_component = !keep_all;
      run_eval_geom(eval_ref, eval_recon, eval_scene, eval_out, eo, g);
    } else if (renders->parsed()) {
      ro.color = parse_rgb(color);
      run_eval_renders(render_mesh, render_scene, render_ref, render_out, ro);
    } else if (serve->parsed()) {
      run_serve(host, port, mean, cov_scale, g);
    }
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const RuntimeError& e) {
    spdlog::error("{}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 3;
  }
  return 0;
}
