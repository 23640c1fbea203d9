#include "nsdf/scene/scene.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "nsdf/field/analytic.hpp"
#include "nsdf/field/radiance_field.hpp"
#include "nsdf/mesh/marching_cubes.hpp"
#include "nsdf/render/render.hpp"

namespace nsdf::scene {

using nlohmann::ordered_json;

namespace {

ordered_json record_json(const ViewRecord& r, bool with_images) {
  ordered_json j;
  j["id"] = r.id;
  j["camera"] = r.camera;
  if (with_images) {
    j["image"] = r.image;
    j["mask"] = r.mask;
  }
  return j;
}

ViewRecord record_from(const ordered_json& j, bool with_images) {
  ViewRecord r;
  r.id = j.at("id").get<std::string>();
  r.camera = j.at("camera").get<std::string>();
  if (with_images) {
    r.image = j.at("image").get<std::string>();
    r.mask = j.at("mask").get<std::string>();
  }
  return r;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw SceneError("cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

std::string SceneManifest::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["prompt_base"] = prompt_base;
  j["visible"] = ordered_json::array();
  for (const auto& r : visible) j["visible"].push_back(record_json(r, true));
  j["unobserved"] = ordered_json::array();
  for (const auto& r : unobserved) j["unobserved"].push_back(record_json(r, false));
  if (reference_mesh) j["reference_mesh"] = *reference_mesh;
  return j.dump(2) + "\n";
}

SceneManifest SceneManifest::from_json(const std::string& text) {
  try {
    const ordered_json j = ordered_json::parse(text);
    SceneManifest m;
    m.name = j.value("name", std::string{});
    m.prompt_base = j.at("prompt_base").get<std::string>();
    for (const auto& r : j.at("visible")) m.visible.push_back(record_from(r, true));
    if (j.contains("unobserved"))
      for (const auto& r : j.at("unobserved")) m.unobserved.push_back(record_from(r, false));
    if (j.contains("reference_mesh") && !j.at("reference_mesh").is_null())
      m.reference_mesh = j.at("reference_mesh").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw SceneError(std::string("manifest: ") + e.what());
  }
}

// ---- cameras ----------------------------------------------------------------

std::string camera_to_text(const render::Camera& c) {
  std::ostringstream os;
  os.precision(17);
  os << "projection " << (c.projection == render::Projection::kPinhole ? "pinhole" : "orthographic") << "\n";
  os << "convention " << (c.convention == render::Convention::kOpenCV ? "opencv" : "opengl") << "\n";
  os << "size " << c.width << " " << c.height << "\n";
  os << "pose\n";
  for (int r = 0; r < 4; ++r) os << c.pose(r, 0) << " " << c.pose(r, 1) << " " << c.pose(r, 2) << " " << c.pose(r, 3) << "\n";
  if (c.projection == render::Projection::kPinhole) {
    os << "intrinsics\n";
    for (int r = 0; r < 3; ++r) os << c.intrinsics(r, 0) << " " << c.intrinsics(r, 1) << " " << c.intrinsics(r, 2) << "\n";
  } else {
    os << "ortho " << c.ortho_width << " " << c.ortho_height << "\n";
  }
  return os.str();
}

render::Camera camera_from_text(const std::string& text) {
  std::istringstream is(text);
  render::Camera c;
  bool have_pose = false;
  bool have_size = false;
  bool have_k = false;
  bool have_ortho = false;
  std::string key;
  auto number = [&is](const std::string& what) {
    double v = 0.0;
    if (!(is >> v)) throw ValidationError("camera: malformed " + what);
    return v;
  };
  while (is >> key) {
    if (key[0] == '#') {
      std::string rest;
      std::getline(is, rest);
    } else if (key == "projection") {
      std::string v;
      is >> v;
      if (v == "pinhole") c.projection = render::Projection::kPinhole;
      else if (v == "orthographic") c.projection = render::Projection::kOrthographic;
      else throw ValidationError("camera: unknown projection '" + v + "'");
    } else if (key == "convention") {
      std::string v;
      is >> v;
      if (v == "opencv") c.convention = render::Convention::kOpenCV;
      else if (v == "opengl") c.convention = render::Convention::kOpenGL;
      else throw ValidationError("camera: unknown convention '" + v + "'");
    } else if (key == "size") {
      c.width = static_cast<int>(number("size"));
      c.height = static_cast<int>(number("size"));
      have_size = true;
    } else if (key == "pose") {
      for (int i = 0; i < 16; ++i) c.pose(i / 4, i % 4) = number("pose");
      have_pose = true;
    } else if (key == "intrinsics") {
      for (int i = 0; i < 9; ++i) c.intrinsics(i / 3, i % 3) = number("intrinsics");
      have_k = true;
    } else if (key == "ortho") {
      c.ortho_width = number("ortho extent");
      c.ortho_height = number("ortho extent");
      have_ortho = true;
    } else {
      throw ValidationError("camera: unknown key '" + key + "'");
    }
  }
  require(have_size, "camera: missing size");
  require(have_pose, "camera: missing pose");
  if (c.projection == render::Projection::kPinhole) require(have_k, "camera: missing intrinsics");
  else require(have_ortho, "camera: missing ortho extent");
  c.validate();
  return c;
}

void write_camera(const std::filesystem::path& path, const render::Camera& camera) {
  std::ofstream os(path);
  if (!os) throw RuntimeError("cannot open " + path.string() + " for writing");
  os << camera_to_text(camera);
}

render::Camera read_camera(const std::filesystem::path& path) { return camera_from_text(read_text(path)); }

// ---- load / save ------------------------------------------------------------

namespace {

render::Camera load_view_camera(const std::filesystem::path& dir, const ViewRecord& r) {
  const auto path = dir / r.camera;
  if (!std::filesystem::exists(path)) throw SceneError("view '" + r.id + "': missing camera file " + path.string());
  try {
    return read_camera(path);
  } catch (const std::exception& e) {
    throw SceneError("view '" + r.id + "': " + e.what());
  }
}

render::Image load_view_png(const std::filesystem::path& dir, const ViewRecord& r, const std::string& file,
                            const char* what) {
  const auto path = dir / file;
  if (file.empty() || !std::filesystem::exists(path))
    throw SceneError("view '" + r.id + "': missing " + what + " file " + path.string());
  try {
    return render::read_png(path);
  } catch (const std::exception& e) {
    throw SceneError("view '" + r.id + "': " + e.what());
  }
}

}  // namespace

Scene load_scene(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw SceneError("no manifest.json in " + dir.string());
  Scene scene;
  scene.manifest = SceneManifest::from_json(read_text(manifest_path));
  const SceneManifest& m = scene.manifest;
  if (m.visible.empty()) throw SceneError("manifest: at least one visible view is required");

  for (const ViewRecord& r : m.visible) {
    trainer::VisibleView v;
    v.camera = load_view_camera(dir, r);
    const render::Image img = load_view_png(dir, r, r.image, "image");
    const render::Image mask = load_view_png(dir, r, r.mask, "mask");
    if (img.channels() < 3) throw SceneError("view '" + r.id + "': image must be RGB");
    if (img.width != mask.width || img.height != mask.height)
      throw SceneError("view '" + r.id + "': image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                       " but mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height));
    if (img.width != v.camera.width || img.height != v.camera.height)
      throw SceneError("view '" + r.id + "': camera size does not match the image");
    v.image = render::Image(img.width, img.height, img.data.leftCols(3));
    MatX bin(mask.pixel_count(), 1);
    for (Eigen::Index i = 0; i < bin.rows(); ++i) bin(i, 0) = mask.data(i, 0) >= 128.0 / 255.0 - 1e-12 ? 1.0 : 0.0;
    v.mask = render::Image(mask.width, mask.height, std::move(bin));
    scene.views.visible.push_back(std::move(v));
  }
  for (const ViewRecord& r : m.unobserved) scene.views.unobserved.push_back(load_view_camera(dir, r));
  if (m.reference_mesh && !std::filesystem::exists(dir / *m.reference_mesh))
    throw SceneError("manifest: missing reference mesh " + (dir / *m.reference_mesh).string());
  return scene;
}

void save_scene(const std::filesystem::path& dir, const Scene& scene) {
  const SceneManifest& m = scene.manifest;
  require(m.visible.size() == scene.views.visible.size() && m.unobserved.size() == scene.views.unobserved.size(),
          "save_scene: manifest and views disagree");
  std::filesystem::create_directories(dir);
  auto ensure_parent = [&dir](const std::string& rel) { std::filesystem::create_directories((dir / rel).parent_path()); };
  for (std::size_t i = 0; i < m.visible.size(); ++i) {
    const ViewRecord& r = m.visible[i];
    const trainer::VisibleView& v = scene.views.visible[i];
    for (const auto* rel : {&r.camera, &r.image, &r.mask}) ensure_parent(*rel);
    write_camera(dir / r.camera, v.camera);
    render::write_png(dir / r.image, v.image);
    render::write_png(dir / r.mask, v.mask);
  }
  for (std::size_t i = 0; i < m.unobserved.size(); ++i) {
    ensure_parent(m.unobserved[i].camera);
    write_camera(dir / m.unobserved[i].camera, scene.views.unobserved[i]);
  }
  std::ofstream os(dir / "manifest.json");
  if (!os) throw RuntimeError("cannot write " + (dir / "manifest.json").string());
  os << m.to_json();
}

std::optional<mesh::TriangleMesh> load_reference_mesh(const std::filesystem::path& dir, const SceneManifest& manifest) {
  if (!manifest.reference_mesh) return std::nullopt;
  return mesh::read_mesh(dir / *manifest.reference_mesh);
}

// ---- synthesis --------------------------------------------------------------

std::pair<std::vector<render::Camera>, std::vector<render::Camera>> synth_cameras(const SynthOptions& o) {
  require(o.n_visible >= 1 && o.n_unobserved >= 0, "synth: need at least one visible view");
  require(o.resolution >= 1, "synth: resolution must be positive");
  require(o.min_elevation_deg > 0.0 && o.max_elevation_deg < 90.0 && o.min_elevation_deg <= o.max_elevation_deg,
          "synth: elevations must lie in (0, 90)");
  std::mt19937_64 rng(o.seed);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  auto ring = [&](int n, double sign, double az0) {
    std::vector<render::Camera> cams;
    for (int i = 0; i < n; ++i) {
      const double t = (i + 0.5) / n;
      const double el = (o.min_elevation_deg + t * (o.max_elevation_deg - o.min_elevation_deg)) * std::numbers::pi / 180.0;
      const double az = az0 + golden * i;
      const Vec3 eye = o.distance * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), sign * std::sin(el));
      cams.push_back(render::look_at_pinhole(eye, Vec3::Zero(), Vec3::UnitZ(), o.fov_deg, o.resolution, o.resolution));
    }
    return cams;
  };
  const double az_vis = u(rng);
  const double az_uno = u(rng);
  return {ring(o.n_visible, 1.0, az_vis), ring(o.n_unobserved, -1.0, az_uno)};
}

namespace {

std::string default_prompt(const std::string& shape) {
  const std::string kind = shape.substr(0, shape.find(':'));
  if (kind == "sphere") return "a sphere";
  if (kind == "box") return "a box";
  if (kind == "torus") return "a torus";
  return "an object";
}

std::string view_id(char prefix, int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%c%02d", prefix, i);
  return buf;
}

}  // namespace

Scene synth_views(const SynthOptions& o) {
  const field::AnalyticSdf sdf = field::parse_shape(o.shape);
  const field::ShadedRadiance radiance(o.albedo, o.light);
  const auto [vis, uno] = synth_cameras(o);
  render::SamplingSpec spec;
  spec.n_coarse = o.n_coarse;
  spec.n_fine = o.n_fine;

  Scene scene;
  SceneManifest& m = scene.manifest;
  m.name = o.shape;
  m.prompt_base = o.prompt_base.empty() ? default_prompt(o.shape) : o.prompt_base;
  for (std::size_t i = 0; i < vis.size(); ++i) {
    const std::string id = view_id('v', static_cast<int>(i));
    m.visible.push_back({id, "cameras/" + id + ".txt", "images/" + id + ".png", "masks/" + id + ".png"});
    const render::RayBundle rays = render::generate_all_rays(vis[i], spec.bound_radius);
    const render::RenderOutput out = render::render(sdf, &radiance, rays, spec, o.s);
    trainer::VisibleView v;
    v.camera = vis[i];
    MatX rgb = out.color.cwiseMax(0.0).cwiseMin(1.0);
    if (o.quantize) rgb = rgb.unaryExpr([](double x) { return std::round(x * 255.0) / 255.0; });
    v.image = render::Image(o.resolution, o.resolution, std::move(rgb));
    MatX mask = (out.opacity.array() >= 0.5).cast<double>().matrix();
    v.mask = render::Image(o.resolution, o.resolution, std::move(mask));
    scene.views.visible.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < uno.size(); ++i) {
    const std::string id = view_id('u', static_cast<int>(i));
    m.unobserved.push_back({id, "cameras/" + id + ".txt", "", ""});
    scene.views.unobserved.push_back(uno[i]);
  }
  return scene;
}

Scene synth_scene(const std::filesystem::path& dir, const SynthOptions& o) {
  Scene scene = synth_views(o);
  scene.manifest.reference_mesh = "reference.ply";
  save_scene(dir, scene);
  const field::AnalyticSdf sdf = field::parse_shape(o.shape);
  mesh::Bounds bounds;
  bounds.lo = Vec3::Constant(-1.2);
  bounds.hi = Vec3::Constant(1.2);
  mesh::write_mesh(dir / "reference.ply", mesh::extract_mesh(sdf, o.mesh_resolution, bounds));
  return scene;
}

}  // namespace nsdf::scene
