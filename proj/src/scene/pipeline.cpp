#include "nsdf/scene/pipeline.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "nsdf/mesh/bvh.hpp"
#include "nsdf/mesh/marching_cubes.hpp"
#include "nsdf/render/image.hpp"
#include "nsdf/trainer/trainer.hpp"

namespace nsdf::scene {

using json = nlohmann::ordered_json;

mesh::TriangleMesh extract_from_checkpoint(const std::filesystem::path& checkpoint, int resolution, double bound) {
  require(bound > 0.0, "extract: bound must be > 0");
  const trainer::TrainedFields fields = trainer::load_trained_fields(checkpoint);
  mesh::Bounds b;
  b.lo = Vec3::Constant(-bound);
  b.hi = Vec3::Constant(bound);
  return mesh::extract_mesh(fields.sdf, resolution, b);
}

mesh::MetricsReport evaluate_against(mesh::TriangleMesh reference, const mesh::TriangleMesh& reconstructed,
                                     const std::vector<render::Camera>& visible_cameras,
                                     const mesh::EvalOptions& options) {
  if (!visible_cameras.empty()) {
    reference = mesh::cleanup(reference);
    reference.visible = mesh::mark_visible(reference, visible_cameras);
  }
  return mesh::evaluate_geometry(reference, reconstructed, options);
}

namespace {

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

EvalRenderSet write_eval_renders(const mesh::TriangleMesh& mesh, const std::optional<mesh::TriangleMesh>& reference,
                                 const std::filesystem::path& out_dir, const EvalRenderOptions& options) {
  require(options.views >= 1, "eval-renders: need at least one view");
  require(options.resolution >= 1, "eval-renders: resolution must be >= 1");
  require(!mesh.empty(), "eval-renders: mesh is empty");
  EvalRenderSet set;
  set.cameras = mesh::fibonacci_views(options.views, options.distance, options.extent, options.resolution);
  if (reference && !reference->visible.empty()) {
    set.selection = mesh::select_unobserved_eval_views(set.cameras, *reference, options.max_visible_fraction);
  } else {
    if (reference) spdlog::warn("eval-renders: reference has no visibility flags, keeping every view");
    for (std::size_t i = 0; i < set.cameras.size(); ++i) set.selection.kept.push_back(i);
    set.selection.visible_fraction.assign(set.cameras.size(), std::nan(""));
  }

  std::filesystem::create_directories(out_dir);
  const mesh::Bvh bvh(mesh);
  std::vector<bool> kept(set.cameras.size(), false);
  for (std::size_t i : set.selection.kept) kept[i] = true;

  json views = json::array();
  for (std::size_t i = 0; i < set.cameras.size(); ++i) {
    const render::Camera& cam = set.cameras[i];
    char id[16];
    std::snprintf(id, sizeof id, "view_%03zu", i);
    json v;
    v["id"] = id;
    v["status"] = kept[i] ? "kept" : "discarded";
    const double frac = set.selection.visible_fraction[i];
    v["visible_fraction"] = std::isfinite(frac) ? json(frac) : json(nullptr);
    v["projection"] = "orthographic";
    v["pose"] = matrix_json(cam.pose);
    v["ortho_size"] = {cam.ortho_width, cam.ortho_height};
    v["resolution"] = {cam.width, cam.height};
    if (kept[i]) {
      const std::filesystem::path file = std::string(id) + ".png";
      render::write_png(out_dir / file, mesh::render_eval_view(bvh, cam, options.color));
      set.images.push_back(out_dir / file);
      v["image"] = file.string();
    } else {
      v["image"] = nullptr;
    }
    views.push_back(std::move(v));
  }
  json root;
  root["color"] = {options.color.x(), options.color.y(), options.color.z()};
  root["background"] = {1.0, 1.0, 1.0};
  root["max_visible_fraction"] = options.max_visible_fraction;
  root["kept"] = set.selection.kept.size();
  root["discarded"] = set.selection.discarded.size();
  root["views"] = std::move(views);
  std::ofstream out(out_dir / "manifest.json");
  out << root.dump(2) << '\n';
  if (!out) throw RuntimeError("cannot write " + (out_dir / "manifest.json").string());
  return set;
}

}  // namespace nsdf::scene
