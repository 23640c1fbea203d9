#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nsdf/mesh/mesh.hpp"
#include "nsdf/render/camera.hpp"
#include "nsdf/trainer/trainer.hpp"

namespace nsdf::scene {

/// Load failure; the message names the offending view or file.
class SceneError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

struct ViewRecord {
  std::string id;
  std::string camera;  // paths relative to the scene directory
  std::string image;   // empty for unobserved views
  std::string mask;
  bool operator==(const ViewRecord&) const = default;
};

struct SceneManifest {
  std::string name;
  std::string prompt_base;
  std::vector<ViewRecord> visible;
  std::vector<ViewRecord> unobserved;
  std::optional<std::string> reference_mesh;
  bool operator==(const SceneManifest&) const = default;

  [[nodiscard]] std::string to_json() const;
  static SceneManifest from_json(const std::string& text);
};

struct Scene {
  SceneManifest manifest;
  trainer::ViewSet views;
};

/// Camera text file:
///   projection pinhole|orthographic
///   convention opencv|opengl
///   size W H
///   pose        (4 rows of 4, world-from-camera)
///   intrinsics  (3 rows of 3, pinhole)
///   ortho W H   (orthographic image-plane extent)
std::string camera_to_text(const render::Camera& camera);
render::Camera camera_from_text(const std::string& text);
void write_camera(const std::filesystem::path& path, const render::Camera& camera);
render::Camera read_camera(const std::filesystem::path& path);

/// Reads manifest.json and every referenced file. Masks binarize at 128/255.
Scene load_scene(const std::filesystem::path& dir);
/// Writes manifest.json plus cameras/, images/ and masks/ under `dir`, using the manifest's file names.
void save_scene(const std::filesystem::path& dir, const Scene& scene);
std::optional<mesh::TriangleMesh> load_reference_mesh(const std::filesystem::path& dir, const SceneManifest& manifest);

struct SynthOptions {
  std::string shape = "sphere:0.5";
  int n_visible = 8;
  int n_unobserved = 4;
  int resolution = 64;
  double distance = 3.0;
  double fov_deg = 40.0;
  double min_elevation_deg = 15.0;  // visible cameras span [min, max] elevation; unobserved mirror them below
  double max_elevation_deg = 75.0;
  std::uint64_t seed = 0;
  double s = 256.0;
  int n_coarse = 128;
  int n_fine = 128;
  int mesh_resolution = 256;
  Vec3 albedo = Vec3(0.75, 0.55, 0.35);
  Vec3 light = Vec3(0.3, 0.4, 0.85);
  std::string prompt_base;  // defaults from the shape name
  bool quantize = true;     // round images to 8 bit so in-memory scenes equal their files
};

/// Visible cameras on the +z hemisphere, unobserved on -z, all at `distance` looking at the origin.
std::pair<std::vector<render::Camera>, std::vector<render::Camera>> synth_cameras(const SynthOptions& options);
/// Renders the ground-truth images and masks in memory.
Scene synth_views(const SynthOptions& options);
/// synth_views plus the files and a reference mesh (reference.ply).
Scene synth_scene(const std::filesystem::path& dir, const SynthOptions& options);

}  // namespace nsdf::scene
