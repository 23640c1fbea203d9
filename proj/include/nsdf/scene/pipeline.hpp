#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "nsdf/mesh/evaluation.hpp"
#include "nsdf/mesh/mesh.hpp"
#include "nsdf/render/camera.hpp"

namespace nsdf::scene {

/// Zero level set of a training checkpoint's SDF over [-bound, bound]^3.
mesh::TriangleMesh extract_from_checkpoint(const std::filesystem::path& checkpoint, int resolution, double bound);

/// Flags the reference from `visible_cameras` (when given) and runs the geometric protocol.
mesh::MetricsReport evaluate_against(mesh::TriangleMesh reference, const mesh::TriangleMesh& reconstructed,
                                     const std::vector<render::Camera>& visible_cameras,
                                     const mesh::EvalOptions& options = {});

struct EvalRenderOptions {
  int views = 100;
  int resolution = 256;
  double distance = 3.0;
  double extent = 2.4;  // orthographic image-plane side in world units
  Vec3 color = Vec3(0.85, 0.45, 0.30);
  double max_visible_fraction = 1.0 / 3.0;
};

struct EvalRenderSet {
  std::vector<render::Camera> cameras;
  mesh::ViewSelection selection;
  std::vector<std::filesystem::path> images;  // one per kept view
};

/// Renders the kept evaluation views of `mesh` into `out_dir` plus `manifest.json`.
/// Views are filtered against `reference` when it carries visibility flags; otherwise all are kept.
EvalRenderSet write_eval_renders(const mesh::TriangleMesh& mesh, const std::optional<mesh::TriangleMesh>& reference,
                                 const std::filesystem::path& out_dir, const EvalRenderOptions& options = {});

}  // namespace nsdf::scene
