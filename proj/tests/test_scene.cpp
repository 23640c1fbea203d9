#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "nsdf/field/analytic.hpp"
#include "nsdf/mesh/evaluation.hpp"
#include "nsdf/mesh/marching_cubes.hpp"
#include "nsdf/render/render.hpp"
#include "nsdf/scene/scene.hpp"
#include "quadrature.hpp"

using namespace nsdf;
using namespace nsdf::scene;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("nsdf_test_scene_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

SynthOptions small_options() {
  SynthOptions o;
  o.resolution = 24;
  o.n_coarse = 64;
  o.n_fine = 64;
  o.mesh_resolution = 48;
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("camera text round trip") {
  const auto pin = render::look_at_pinhole({1, 2, 3}, Vec3::Zero(), Vec3::UnitZ(), 35.0, 40, 30);
  const render::Camera back = camera_from_text(camera_to_text(pin));
  CHECK(back.pose == pin.pose);
  CHECK(back.intrinsics == pin.intrinsics);
  CHECK(back.width == 40);
  CHECK(back.height == 30);
  CHECK(back.projection == render::Projection::kPinhole);

  auto ortho = render::look_at_orthographic({0, 0, 3}, Vec3::Zero(), Vec3::UnitY(), 2.5, 16, 16);
  ortho.convention = render::Convention::kOpenGL;
  const render::Camera ob = camera_from_text(camera_to_text(ortho));
  CHECK(ob.projection == render::Projection::kOrthographic);
  CHECK(ob.convention == render::Convention::kOpenGL);
  CHECK(ob.ortho_width == 2.5);

  CHECK_THROWS_AS((void)camera_from_text("size 4 4\npose\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"), ValidationError);
  CHECK_THROWS_AS((void)camera_from_text("size 4 4\nfocal 3\n"), ValidationError);
  CHECK_THROWS_AS((void)camera_from_text(
                      "size 4 4\npose\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\nintrinsics\n0 0 2\n0 0 2\n0 0 1\n"),
                  ValidationError);
}

TEST_CASE("synthetic cameras sit on opposite hemispheres and face the origin") {
  const auto [vis, uno] = synth_cameras(SynthOptions{});
  REQUIRE(vis.size() == 8);
  REQUIRE(uno.size() == 4);
  for (const auto& c : vis) {
    CHECK(c.center().z() > 0.0);
    CHECK(c.center().norm() == doctest::Approx(3.0));
    CHECK((c.view_axis() + c.center().normalized()).norm() < 1e-9);
  }
  for (const auto& c : uno) CHECK(c.center().z() < 0.0);
}

TEST_CASE("synthetic sphere masks cover the projected disk") {
  SynthOptions o = small_options();
  o.resolution = 48;
  o.n_visible = 2;
  o.n_unobserved = 1;
  const Scene s = synth_views(o);
  REQUIRE(s.views.visible.size() == 2);
  const auto& v = s.views.visible[0];
  // Silhouette of a sphere of radius r at distance d: half-angle asin(r/d).
  const double half = std::asin(0.5 / 3.0);
  const double focal = v.camera.intrinsics(0, 0);
  const double radius_px = focal * std::tan(half);
  const double expected = std::numbers::pi * radius_px * radius_px / (48.0 * 48.0);
  const double covered = v.mask.data.sum() / (48.0 * 48.0);
  CHECK(covered == doctest::Approx(expected).epsilon(0.08));
  CHECK(v.mask.at(24, 24, 0) == 1.0);
  CHECK(v.mask.at(0, 0, 0) == 0.0);
  CHECK(v.image.at(0, 0, 0) == 1.0);
  for (Eigen::Index i = 0; i < v.mask.data.size(); ++i) CHECK((v.mask.data(i) == 0.0 || v.mask.data(i) == 1.0));
}

TEST_CASE("synthetic torus images match dense quadrature") {
  SynthOptions o = small_options();
  o.shape = "torus:0.5,0.2";
  o.n_visible = 1;
  o.n_unobserved = 0;
  o.quantize = false;
  o.resolution = 16;
  const Scene s = synth_views(o);
  const auto& v = s.views.visible[0];
  const field::AnalyticSdf torus = field::parse_shape(o.shape);
  const Vec3 light = o.light.normalized();
  auto shade = [&](const Vec3& p) {
    Vec3 g;
    torus(p, &g);
    const double lambert = std::max(g.normalized().dot(light), 0.0);
    return Vec3(o.albedo * (0.25 + 0.75 * lambert));
  };
  const render::RayBundle rays = render::generate_all_rays(v.camera, 1.0);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < rays.size(); i += 3) {
    if (!rays.hit[static_cast<std::size_t>(i)]) continue;
    const auto ref = nsdf::testing::dense_reference(torus, rays.origins.row(i).transpose(),
                                                    rays.directions.row(i).transpose(), rays.near[i], rays.far[i], o.s,
                                                    shade, Vec3::Ones());
    worst = std::max(worst, (v.image.data.row(i).transpose() - ref.color).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-3);
}

TEST_CASE("synth scene writes a loadable scene with 8 visible and 4 unobserved views") {
  const auto dir = fresh_dir("toy");
  const Scene made = synth_scene(dir, small_options());
  const Scene loaded = load_scene(dir);
  CHECK(loaded.manifest == made.manifest);
  CHECK(loaded.views.visible.size() == 8);
  CHECK(loaded.views.unobserved.size() == 4);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(loaded.views.visible[i].image.data == made.views.visible[i].image.data);
    CHECK(loaded.views.visible[i].mask.data == made.views.visible[i].mask.data);
    CHECK(loaded.views.visible[i].camera.pose == made.views.visible[i].camera.pose);
  }
  CHECK_NOTHROW(loaded.views.validate());

  // Round trip through save_scene keeps the manifest.
  const auto copy = fresh_dir("copy");
  SceneManifest expected = loaded.manifest;
  expected.reference_mesh.reset();  // save_scene does not copy the mesh
  Scene stripped = loaded;
  stripped.manifest = expected;
  save_scene(copy, stripped);
  CHECK(load_scene(copy).manifest == expected);
  std::filesystem::remove_all(copy);

  const auto ref = load_reference_mesh(dir, loaded.manifest);
  REQUIRE(ref.has_value());
  const auto sphere = field::sphere_sdf(0.5);
  const mesh::TriangleMesh again = mesh::extract_mesh(sphere, 64);
  mesh::EvalOptions opt;
  opt.spacing = 0.02;
  const mesh::MetricsReport r = mesh::evaluate_geometry(*ref, again, opt);
  CHECK(r.f_score == 1.0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synth is byte-deterministic for a fixed seed") {
  const auto a = fresh_dir("det_a");
  const auto b = fresh_dir("det_b");
  SynthOptions o = small_options();
  o.n_visible = 3;
  o.n_unobserved = 2;
  o.seed = 7;
  synth_scene(a, o);
  synth_scene(b, o);
  long files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / std::filesystem::relative(e.path(), a)));
  }
  CHECK(files == 1 + 3 * 3 + 2 + 1);
  o.seed = 8;
  CHECK(synth_views(o).views.visible[0].camera.pose != load_scene(a).views.visible[0].camera.pose);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("load errors name the offending view") {
  const auto dir = fresh_dir("broken");
  SynthOptions o = small_options();
  o.n_visible = 4;
  o.n_unobserved = 1;
  synth_scene(dir, o);

  SUBCASE("missing mask") {
    std::filesystem::remove(dir / "masks/v03.png");
    try {
      (void)load_scene(dir);
      FAIL("expected a load error");
    } catch (const SceneError& e) {
      CHECK(std::string(e.what()).find("v03") != std::string::npos);
      CHECK(std::string(e.what()).find("mask") != std::string::npos);
    }
  }
  SUBCASE("mask size mismatch") {
    render::write_png(dir / "masks/v01.png", render::Image(5, 5, 1, 1.0));
    try {
      (void)load_scene(dir);
      FAIL("expected a load error");
    } catch (const SceneError& e) {
      CHECK(std::string(e.what()).find("v01") != std::string::npos);
    }
  }
  SUBCASE("singular intrinsics") {
    std::ofstream(dir / "cameras/u00.txt") << "size 24 24\npose\n1 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n"
                                              "intrinsics\n1 0 0\n0 1 0\n0 0 0\n";
    try {
      (void)load_scene(dir);
      FAIL("expected a load error");
    } catch (const SceneError& e) {
      CHECK(std::string(e.what()).find("u00") != std::string::npos);
    }
  }
  SUBCASE("no manifest or no visible views") {
    std::filesystem::remove(dir / "manifest.json");
    CHECK_THROWS_AS((void)load_scene(dir), SceneError);
    std::ofstream(dir / "manifest.json") << R"({"prompt_base": "a sphere", "visible": []})";
    CHECK_THROWS_AS((void)load_scene(dir), SceneError);
    std::ofstream(dir / "manifest.json") << "{not json";
    CHECK_THROWS_AS((void)load_scene(dir), SceneError);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("binary masks threshold at 128") {
  const auto dir = fresh_dir("thresh");
  SynthOptions o = small_options();
  o.n_visible = 1;
  o.n_unobserved = 0;
  synth_scene(dir, o);
  render::Image m(24, 24, 1, 0.0);
  m.at(0, 0, 0) = 128.0 / 255.0;
  m.at(1, 0, 0) = 127.0 / 255.0;
  render::write_png(dir / "masks/v00.png", m);
  const Scene s = load_scene(dir);
  CHECK(s.views.visible[0].mask.at(0, 0, 0) == 1.0);
  CHECK(s.views.visible[0].mask.at(1, 0, 0) == 0.0);
  std::filesystem::remove_all(dir);
}
