#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <queue>
#include <random>
#include <set>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "doctest.h"
#include "nsdf/field/analytic.hpp"
#include "nsdf/mesh/bvh.hpp"
#include "nsdf/mesh/evaluation.hpp"
#include "nsdf/mesh/marching_cubes.hpp"
#include "nsdf/mesh/mesh.hpp"
#include "nsdf/render/camera.hpp"
#include "support.hpp"

using namespace nsdf;
using namespace nsdf::mesh;
using nsdf::testing::random_unit;

namespace {

TriangleMesh from_lists(const std::vector<Vec3>& v, const std::vector<std::array<int, 3>>& f) {
  TriangleMesh m;
  m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = v[i].transpose();
  m.triangles.resize(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i)
    m.triangles.row(static_cast<Eigen::Index>(i)) << f[i][0], f[i][1], f[i][2];
  return m;
}

// Subdivided icosahedron projected to a sphere, outward winding.
TriangleMesh icosphere(int levels, double radius = 1.0, const Vec3& center = Vec3::Zero()) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& p : v) p.normalize();
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> nf;
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]);
      const int b = midpoint(tri[1], tri[2]);
      const int c = midpoint(tri[2], tri[0]);
      nf.push_back({tri[0], a, c});
      nf.push_back({tri[1], b, a});
      nf.push_back({tri[2], c, b});
      nf.push_back({a, b, c});
    }
    f = nf;
  }
  for (auto& p : v) p = center + radius * p;
  return from_lists(v, f);
}

TriangleMesh unit_square(double side = 1.0) {
  return from_lists({{0, 0, 0}, {side, 0, 0}, {side, side, 0}, {0, side, 0}}, {{{0, 1, 2}}, {{0, 2, 3}}});
}

TriangleMesh concat(const TriangleMesh& a, const TriangleMesh& b) {
  TriangleMesh m;
  m.vertices.resize(a.vertex_count() + b.vertex_count(), 3);
  m.vertices << a.vertices, b.vertices;
  m.triangles.resize(a.triangle_count() + b.triangle_count(), 3);
  m.triangles << a.triangles, (b.triangles.array() + static_cast<int>(a.vertex_count())).matrix();
  return m;
}

TriangleMesh random_soup(std::mt19937_64& rng, int vertices, int triangles, double extent = 1.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  std::uniform_int_distribution<int> pick(0, vertices - 1);
  std::vector<Vec3> v;
  for (int i = 0; i < vertices; ++i) v.emplace_back(u(rng), u(rng), u(rng));
  std::vector<std::array<int, 3>> f;
  while (static_cast<int>(f.size()) < triangles) {
    const int a = pick(rng);
    const int b = pick(rng);
    const int c = pick(rng);
    if (a != b && b != c && a != c) f.push_back({a, b, c});
  }
  return from_lists(v, f);
}

// Brute-force minimal sphere: smallest enclosing sphere through 2, 3 or 4 of the points.
Sphere brute_minimal_sphere(const std::vector<Vec3>& p) {
  Sphere best{Vec3::Zero(), std::numeric_limits<double>::infinity()};
  auto check = [&](const Vec3& c, double r) {
    if (r >= best.radius) return;
    for (const Vec3& q : p)
      if ((q - c).norm() > r * (1 + 1e-10)) return;
    best = {c, r};
  };
  const std::size_t n = p.size();
  if (n == 1) return {p[0], 0.0};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      check(0.5 * (p[i] + p[j]), 0.5 * (p[i] - p[j]).norm());
      for (std::size_t k = j + 1; k < n; ++k) {
        // Center in the plane of the triple, equidistant from all three.
        Mat3 a;
        Vec3 b;
        const Vec3 nrm = (p[j] - p[i]).cross(p[k] - p[i]);
        a.row(0) = 2 * (p[j] - p[i]).transpose();
        a.row(1) = 2 * (p[k] - p[i]).transpose();
        a.row(2) = nrm.transpose();
        b << p[j].squaredNorm() - p[i].squaredNorm(), p[k].squaredNorm() - p[i].squaredNorm(), nrm.dot(p[i]);
        if (std::abs(a.determinant()) > 1e-14) {
          const Vec3 c = a.fullPivLu().solve(b);
          check(c, (c - p[i]).norm());
        }
        for (std::size_t l = k + 1; l < n; ++l) {
          Mat3 m;
          Vec3 rhs;
          m.row(0) = 2 * (p[j] - p[i]).transpose();
          m.row(1) = 2 * (p[k] - p[i]).transpose();
          m.row(2) = 2 * (p[l] - p[i]).transpose();
          rhs << p[j].squaredNorm() - p[i].squaredNorm(), p[k].squaredNorm() - p[i].squaredNorm(),
              p[l].squaredNorm() - p[i].squaredNorm();
          if (std::abs(m.determinant()) > 1e-14) {
            const Vec3 c = m.fullPivLu().solve(rhs);
            check(c, (c - p[i]).norm());
          }
        }
      }
    }
  return best;
}

// Orthographic z-buffer rasterizer, independent of the BVH path.
std::vector<int> rasterize_ids(const TriangleMesh& mesh, const render::Camera& cam) {
  std::vector<int> ids(static_cast<std::size_t>(cam.width * cam.height), -1);
  std::vector<double> depth(ids.size(), std::numeric_limits<double>::infinity());
  const Vec3 axis = cam.view_axis();
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    std::array<Eigen::Vector2d, 3> q;
    std::array<double, 3> z{};
    for (int k = 0; k < 3; ++k) {
      const auto px = cam.project(mesh.corner(t, k));
      q[static_cast<std::size_t>(k)] = {px->first, px->second};
      z[static_cast<std::size_t>(k)] = (mesh.corner(t, k) - cam.center()).dot(axis);
    }
    const double area = (q[1] - q[0]).x() * (q[2] - q[0]).y() - (q[1] - q[0]).y() * (q[2] - q[0]).x();
    if (area == 0.0) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({q[0].x(), q[1].x(), q[2].x()}))));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(std::max({q[0].x(), q[1].x(), q[2].x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({q[0].y(), q[1].y(), q[2].y()}))));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(std::max({q[0].y(), q[1].y(), q[2].y()}))));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x + 0.5, y + 0.5);
        auto edge = [](const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
          return (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        };
        const double w0 = edge(q[1], q[2], p) / area;
        const double w1 = edge(q[2], q[0], p) / area;
        const double w2 = edge(q[0], q[1], p) / area;
        if (w0 < 0 || w1 < 0 || w2 < 0) continue;
        const double d = w0 * z[0] + w1 * z[1] + w2 * z[2];
        const auto idx = static_cast<std::size_t>(y * cam.width + x);
        if (d < depth[idx]) {
          depth[idx] = d;
          ids[idx] = static_cast<int>(t);
        }
      }
  }
  return ids;
}

std::vector<std::uint8_t> flags_by_normal_z(const TriangleMesh& m, double min_z) {
  std::vector<std::uint8_t> f;
  for (Eigen::Index t = 0; t < m.triangle_count(); ++t) f.push_back(m.center(t).normalized().z() > min_z);
  return f;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("nsdf_test_mesh_" + name);
}

}  // namespace

TEST_CASE("extracted sphere has the analytic area and volume and is watertight") {
  const auto sphere = field::sphere_sdf(0.5);
  const TriangleMesh m = extract_mesh(sphere, 64);
  REQUIRE_FALSE(m.empty());
  CHECK(std::abs(m.area() - std::numbers::pi) / std::numbers::pi < 0.03);
  const double vol = 4.0 / 3.0 * std::numbers::pi * 0.125;
  CHECK(std::abs(m.signed_volume() - vol) / vol < 0.03);
  CHECK(boundary_or_nonmanifold_edges(m) == 0);

  long outward = 0;
  for (Eigen::Index t = 0; t < m.triangle_count(); ++t) outward += m.unit_normal(t).dot(m.center(t)) > 0.0;
  CHECK(outward == m.triangle_count());

  const double cell = 2.0 / 64;
  long good = 0;
  for (Eigen::Index i = 0; i < m.vertex_count(); ++i) good += std::abs(sphere(m.vertex(i))) < 2.0 * cell;
  CHECK(static_cast<double>(good) >= 0.99 * static_cast<double>(m.vertex_count()));
}

TEST_CASE("extraction of a positive field is empty and resolution is validated") {
  const auto far = field::sphere_sdf(0.2, Vec3(5, 5, 5));
  CHECK(extract_mesh(far, 16).empty());
  CHECK_THROWS_AS((void)extract_mesh(far, 4), ValidationError);
}

TEST_CASE("marching cubes on a box is closed and nearly exact") {
  const auto box = field::box_sdf(Vec3(0.31, 0.42, 0.53));
  const TriangleMesh m = extract_mesh(box, 40);
  CHECK(boundary_or_nonmanifold_edges(m) == 0);
  CHECK(m.signed_volume() == doctest::Approx(0.62 * 0.84 * 1.06).epsilon(0.05));
}

TEST_CASE("cleanup welds duplicates and drops degenerate triangles") {
  TriangleMesh m = from_lists({{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 0, 0}, {5, 5, 5}, {2, 0, 0}},
                              {{{0, 1, 2}}, {{0, 3, 2}}, {{0, 1, 3}}, {{0, 1, 5}}});
  m.visible = {1, 0, 1, 1};
  const TriangleMesh c = cleanup(m);
  CHECK(c.vertex_count() == 3);
  CHECK(c.triangle_count() == 2);
  CHECK(c.visible == std::vector<std::uint8_t>{1, 0});
}

TEST_CASE("largest component keeps the component with the most triangles") {
  const TriangleMesh big = icosphere(2);
  const TriangleMesh small = icosphere(1, 0.5, Vec3(3, 0, 0));
  const TriangleMesh both = concat(small, big);
  const TriangleMesh kept = largest_component(both);
  CHECK(kept.triangle_count() == big.triangle_count());
  CHECK(kept.area() == doctest::Approx(big.area()));
  CHECK(largest_component(big).triangle_count() == big.triangle_count());
  CHECK(largest_component(TriangleMesh{}).empty());
}

TEST_CASE("largest component tie breaks by area then by first vertex") {
  const TriangleMesh a = icosphere(0, 1.0);
  const TriangleMesh b = icosphere(0, 2.0, Vec3(10, 0, 0));
  CHECK(largest_component(concat(a, b)).area() == doctest::Approx(b.area()));
  const TriangleMesh c = icosphere(0, 1.0, Vec3(10, 0, 0));
  const TriangleMesh kept = largest_component(concat(a, c));
  CHECK(kept.vertices.col(0).maxCoeff() < 2.0);
}

TEST_CASE("component labels agree with a breadth-first oracle on random soups") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int nv = 10 + trial * 3;
    const TriangleMesh m = random_soup(rng, nv, nv / 3 + trial % 7);
    // Triangle adjacency through shared vertices, explored breadth first.
    std::vector<std::vector<int>> by_vertex(static_cast<std::size_t>(nv));
    for (Eigen::Index t = 0; t < m.triangle_count(); ++t)
      for (int k = 0; k < 3; ++k) by_vertex[static_cast<std::size_t>(m.triangles(t, k))].push_back(static_cast<int>(t));
    std::vector<int> label(static_cast<std::size_t>(m.triangle_count()), -1);
    int next = 0;
    for (Eigen::Index s = 0; s < m.triangle_count(); ++s) {
      if (label[static_cast<std::size_t>(s)] >= 0) continue;
      std::queue<int> q;
      q.push(static_cast<int>(s));
      label[static_cast<std::size_t>(s)] = next;
      while (!q.empty()) {
        const int t = q.front();
        q.pop();
        for (int k = 0; k < 3; ++k)
          for (int o : by_vertex[static_cast<std::size_t>(m.triangles(t, k))])
            if (label[static_cast<std::size_t>(o)] < 0) {
              label[static_cast<std::size_t>(o)] = next;
              q.push(o);
            }
      }
      ++next;
    }
    CHECK(triangle_components(m) == label);
    std::vector<long> sizes(static_cast<std::size_t>(next), 0);
    for (int l : label) ++sizes[static_cast<std::size_t>(l)];
    CHECK(largest_component(m).triangle_count() == *std::max_element(sizes.begin(), sizes.end()));
  }
}

TEST_CASE("minimal enclosing sphere matches brute force on small point sets") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 12;
    std::vector<Vec3> pts;
    for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), trial % 5 == 0 ? 0.0 : u(rng));
    const Sphere fast = minimal_enclosing_sphere(pts);
    const Sphere slow = brute_minimal_sphere(pts);
    CHECK(fast.radius == doctest::Approx(slow.radius).epsilon(1e-9));
    CHECK((fast.center - slow.center).norm() < 1e-6);
  }
}

TEST_CASE("minimal enclosing sphere of many sphere points is the sphere") {
  const TriangleMesh m = icosphere(4, 2.0, Vec3(1, -2, 3));
  std::vector<Vec3> pts;
  for (Eigen::Index i = 0; i < m.vertex_count(); ++i) pts.push_back(m.vertex(i));
  const Sphere s = minimal_enclosing_sphere(pts);
  CHECK(s.radius == doctest::Approx(2.0).epsilon(1e-9));
  CHECK((s.center - Vec3(1, -2, 3)).norm() < 1e-9);
}

TEST_CASE("normalization fits the reference into the unit sphere") {
  const TriangleMesh unit = icosphere(2);
  const NormalizedPair id = normalize_pair(unit, unit);
  CHECK(id.transform.scale == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(id.transform.center.norm() < 1e-9);

  const Vec3 shift(0.3, -1.2, 2.0);
  const TriangleMesh moved = transformed(unit, -shift / 5.0, 5.0);
  const NormalizedPair p = normalize_pair(moved, moved);
  CHECK(p.transform.scale == doctest::Approx(0.2).epsilon(1e-9));
  CHECK((p.transform.center - shift).norm() < 1e-9);
  CHECK(p.reference.vertices.rowwise().norm().maxCoeff() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS((void)normalize_pair(TriangleMesh{}, unit), ValidationError);
}

TEST_CASE("resampling a unit square respects the spacing") {
  const SurfaceSamples s = resample_surface(unit_square(), 0.1, 3);
  CHECK(s.size() >= 50);
  CHECK(s.size() <= 200);
  double closest = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < s.size(); ++i)
    for (Eigen::Index j = i + 1; j < s.size(); ++j)
      closest = std::min(closest, (s.points.row(i) - s.points.row(j)).norm());
  CHECK(closest >= 0.1);
  CHECK(static_cast<Eigen::Index>(s.source_triangle.size()) == s.size());
}

TEST_CASE("resampling count scales with the inverse square of the spacing") {
  double fine = 0.0;
  double coarse = 0.0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    fine += static_cast<double>(resample_surface(unit_square(), 0.02, seed).size());
    coarse += static_cast<double>(resample_surface(unit_square(), 0.04, seed).size());
  }
  const double ratio = fine / coarse;
  CHECK(ratio >= 3.0);
  CHECK(ratio <= 5.0);
}

TEST_CASE("resampling count is within a factor of two of the spacing formula") {
  const TriangleMesh m = icosphere(4);
  const double spacing = 0.02;
  const SurfaceSamples s = resample_surface(m, spacing, 1);
  const double expected = expected_sample_count(m.area(), spacing);
  const double ratio = static_cast<double>(s.size()) / expected;
  MESSAGE("samples / formula = " << ratio);
  CHECK(ratio > 0.5);
  CHECK(ratio < 2.0);

  // Median nearest-neighbor gap within x2 of the spacing, samples on their source triangles.
  const Bvh bvh(m);
  std::vector<double> gaps;
  for (Eigen::Index i = 0; i < s.size(); i += 37) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < s.size(); ++j)
      if (j != i) best = std::min(best, (s.points.row(i) - s.points.row(j)).norm());
    gaps.push_back(best);
    const int src = s.source_triangle[static_cast<std::size_t>(i)];
    CHECK(point_triangle_distance2(s.points.row(i).transpose(), m.corner(src, 0), m.corner(src, 1),
                                   m.corner(src, 2)) < 1e-20);
  }
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<long>(gaps.size() / 2), gaps.end());
  const double median = gaps[gaps.size() / 2];
  CHECK(median >= spacing);
  CHECK(median <= 2.0 * spacing);
}

TEST_CASE("resampling degenerate inputs") {
  CHECK(resample_surface(TriangleMesh{}, 0.1).size() == 0);
  CHECK(resample_surface(unit_square(0.01), 10.0).size() >= 1);
  CHECK_THROWS_AS((void)resample_surface(unit_square(), 0.0), ValidationError);
}

TEST_CASE("resampling is deterministic per seed") {
  const TriangleMesh m = icosphere(2);
  const SurfaceSamples a = resample_surface(m, 0.05, 9);
  const SurfaceSamples b = resample_surface(m, 0.05, 9);
  CHECK(a.points == b.points);
  CHECK(a.source_triangle == b.source_triangle);
}

TEST_CASE("f-score is the harmonic mean") {
  CHECK(f_score(1.0, 1.0) == doctest::Approx(1.0));
  CHECK(f_score(0.5, 1.0) == doctest::Approx(2.0 / 3.0));
  CHECK(f_score(0.0, 0.0) == 0.0);
  CHECK_THROWS_AS((void)f_score(1.5, 0.5), ValidationError);
}

TEST_CASE("bvh queries agree with brute force") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    const TriangleMesh m = trial % 2 ? random_soup(rng, 60, 25 * (trial + 1)) : icosphere(trial % 4 == 0 ? 2 : 1);
    REQUIRE(m.triangle_count() <= 500);
    const Bvh bvh(m);
    for (int q = 0; q < 100; ++q) {
      const Vec3 p(u(rng), u(rng), u(rng));
      const ClosestPoint a = bvh.closest(p);
      const ClosestPoint b = brute_force_closest(m, p);
      CHECK(a.distance2 == b.distance2);
      CHECK(a.triangle == b.triangle);
      const Vec3 d = random_unit(rng);
      const RayHit ha = bvh.intersect(p, d);
      const RayHit hb = brute_force_intersect(m, p, d);
      CHECK(ha.triangle == hb.triangle);
      if (hb.hit()) CHECK(ha.t == hb.t);
      const RayHit sa = bvh.intersect(p, d, 0.0, 0.7, hb.triangle);
      const RayHit sb = brute_force_intersect(m, p, d, 0.0, 0.7, hb.triangle);
      CHECK(sa.triangle == sb.triangle);
    }
  }
}

TEST_CASE("precision and recall on identical and shifted spheres") {
  const TriangleMesh m = icosphere(4);
  const Bvh bvh(m);
  const SurfaceSamples s = resample_surface(m, 0.02, 0);
  const PrecisionRecall self = precision_recall(s, bvh, s, bvh, 0.02);
  CHECK(self.precision == 1.0);
  CHECK(self.recall == 1.0);

  const TriangleMesh shifted = transformed(m, Vec3(-0.05, 0, 0), 1.0);
  const Bvh sb(shifted);
  const SurfaceSamples ss = resample_surface(shifted, 0.02, 1);
  const PrecisionRecall pr = precision_recall(ss, sb, s, bvh, 0.02);
  // Distance to the shifted sphere is about 0.05 |n_x|, below 0.02 on the band |n_x| < 0.4.
  CHECK(pr.precision == doctest::Approx(0.4).epsilon(0.08));
  CHECK(pr.recall == doctest::Approx(0.4).epsilon(0.08));
  const TriangleMesh grown = transformed(m, Vec3::Zero(), 1.05);
  const Bvh gb(grown);
  const PrecisionRecall far = precision_recall(resample_surface(grown, 0.02, 2), gb, s, bvh, 0.02);
  CHECK(far.precision == 0.0);
  CHECK(far.recall == 0.0);
  // Swapping roles swaps the two fractions.
  const PrecisionRecall rev = precision_recall(s, bvh, ss, sb, 0.02);
  CHECK(rev.precision == pr.recall);
  CHECK(rev.recall == pr.precision);
}

TEST_CASE("precision and recall match a brute-force oracle and grow with the threshold") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const TriangleMesh a = random_soup(rng, 40, 30, 0.5);
    const TriangleMesh b = random_soup(rng, 40, 30, 0.5);
    SurfaceSamples sa;
    SurfaceSamples sb;
    sa.points = nsdf::testing::random_matrix(rng, 100, 3, -0.5, 0.5);
    sb.points = nsdf::testing::random_matrix(rng, 100, 3, -0.5, 0.5);
    const Bvh ba(a);
    const Bvh bb(b);
    double last_p = 0.0;
    double last_r = 0.0;
    for (double thr : {0.01, 0.05, 0.1, 0.2, 0.4}) {
      long p_hits = 0;
      long r_hits = 0;
      for (Eigen::Index i = 0; i < 100; ++i) {
        p_hits += std::sqrt(brute_force_closest(b, sa.points.row(i).transpose()).distance2) < thr;
        r_hits += std::sqrt(brute_force_closest(a, sb.points.row(i).transpose()).distance2) < thr;
      }
      const PrecisionRecall pr = precision_recall(sa, ba, sb, bb, thr);
      CHECK(pr.precision == static_cast<double>(p_hits) / 100.0);
      CHECK(pr.recall == static_cast<double>(r_hits) / 100.0);
      CHECK(pr.precision >= last_p);
      CHECK(pr.recall >= last_r);
      last_p = pr.precision;
      last_r = pr.recall;
    }
  }
  SurfaceSamples empty;
  const Bvh any(icosphere(0));
  CHECK(fraction_within(empty, any, 0.1) == 0.0);
}

TEST_CASE("a single view marks nothing visible") {
  const TriangleMesh m = icosphere(2);
  const auto cam = render::look_at_pinhole({0, 0, 3}, Vec3::Zero(), {0, 1, 0}, 40, 64, 64);
  const auto flags = mark_visible(m, {cam});
  CHECK(std::count(flags.begin(), flags.end(), 1) == 0);
  CHECK_THROWS_AS((void)mark_visible(m, {}), ValidationError);
}

TEST_CASE("upper hemisphere cameras flag upward-facing triangles") {
  const TriangleMesh m = icosphere(3);
  std::vector<render::Camera> cams;
  for (int i = 0; i < 8; ++i) {
    const double az = 2.0 * std::numbers::pi * i / 8.0;
    const double el = std::numbers::pi / 3.0;
    const Vec3 eye = 3.0 * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(render::look_at_pinhole(eye, Vec3::Zero(), {0, 0, 1}, 40, 64, 64));
  }
  const auto flags = mark_visible(m, cams);
  const double band = std::sin(10.0 * std::numbers::pi / 180.0);
  long checked = 0;
  for (Eigen::Index t = 0; t < m.triangle_count(); ++t) {
    const double z = m.center(t).normalized().z();
    if (z > band) {
      CHECK(flags[static_cast<std::size_t>(t)] == 1);
      ++checked;
    } else if (z < -band) {
      CHECK(flags[static_cast<std::size_t>(t)] == 0);
      ++checked;
    }
  }
  CHECK(checked > m.triangle_count() * 3 / 4);

  // An occluding plate above the sphere hides it from every camera.
  const TriangleMesh plate = from_lists({{-20, -20, 1.5}, {20, -20, 1.5}, {20, 20, 1.5}, {-20, 20, 1.5}},
                                        {{{0, 1, 2}}, {{0, 2, 3}}});
  const TriangleMesh scene = concat(m, plate);
  const auto blocked = mark_visible(scene, cams);
  CHECK(std::count(blocked.begin(), blocked.begin() + m.triangle_count(), 1) == 0);
}

TEST_CASE("back-facing and out-of-frame triangles are not visible") {
  const TriangleMesh tri = from_lists({{-0.1, -0.1, 0}, {0.1, -0.1, 0}, {0, 0.1, 0}}, {{{0, 1, 2}}});
  const Bvh bvh(tri);
  const auto above = render::look_at_pinhole({0, 0, 3}, Vec3::Zero(), {0, 1, 0}, 40, 32, 32);
  const auto below = render::look_at_pinhole({0, 0, -3}, Vec3::Zero(), {0, 1, 0}, 40, 32, 32);
  const auto aside = render::look_at_pinhole({5, 0, 3}, Vec3(10, 0, 3), {0, 0, 1}, 40, 32, 32);
  CHECK(triangle_visible_from(bvh, 0, above));
  CHECK_FALSE(triangle_visible_from(bvh, 0, below));
  CHECK_FALSE(triangle_visible_from(bvh, 0, aside));
  const auto ortho = render::look_at_orthographic({0, 0, 3}, Vec3::Zero(), {0, 1, 0}, 2.0, 32, 32);
  CHECK(triangle_visible_from(bvh, 0, ortho));
}

TEST_CASE("view selection trivial cases") {
  TriangleMesh m = icosphere(2);
  const auto views = fibonacci_views(10, 3.0, 2.4, 24);
  m.visible.assign(static_cast<std::size_t>(m.triangle_count()), 1);
  CHECK(select_unobserved_eval_views(views, m).kept.empty());
  m.visible.assign(static_cast<std::size_t>(m.triangle_count()), 0);
  CHECK(select_unobserved_eval_views(views, m).kept.size() == views.size());
  const auto empty_view = render::look_at_orthographic({0, 0, 3}, Vec3(0, 10, 3), {0, 0, 1}, 1.0, 8, 8);
  const ViewSelection sel = select_unobserved_eval_views({empty_view}, m);
  CHECK(sel.discarded.size() == 1);
  CHECK(std::isnan(sel.visible_fraction[0]));
  m.visible.clear();
  CHECK_THROWS_AS((void)select_unobserved_eval_views(views, m), ValidationError);
}

TEST_CASE("hemisphere view selection matches a rasterizer recount") {
  TriangleMesh m = icosphere(3);
  m.visible = flags_by_normal_z(m, 0.0);
  const auto views = fibonacci_views(30, 3.0, 2.4, 48);
  const ViewSelection sel = select_unobserved_eval_views(views, m);
  REQUIRE(sel.visible_fraction.size() == views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto ids = rasterize_ids(m, views[i]);
    long object = 0;
    long flagged = 0;
    for (int id : ids) {
      if (id < 0) continue;
      ++object;
      flagged += m.visible[static_cast<std::size_t>(id)];
    }
    const double oracle = static_cast<double>(flagged) / static_cast<double>(object);
    CHECK(sel.visible_fraction[i] == doctest::Approx(oracle).epsilon(0.02));
    const bool kept = std::find(sel.kept.begin(), sel.kept.end(), i) != sel.kept.end();
    if (std::abs(oracle - 1.0 / 3.0) > 0.03) CHECK(kept == (oracle <= 1.0 / 3.0));
    const double dz = -views[i].view_axis().z();  // camera height direction
    if (dz > 0.5) CHECK_FALSE(kept);
    if (dz < -0.5) CHECK(kept);
  }
}

TEST_CASE("lambert eval renders") {
  const Vec3 color(0.85, 0.45, 0.30);
  const auto cam = render::look_at_orthographic({0, 0, 3}, Vec3::Zero(), {0, 1, 0}, 2.4, 48, 48);

  const TriangleMesh facing = from_lists({{-1, -1, 0}, {1, -1, 0}, {0, 1, 0}}, {{{0, 1, 2}}});
  const render::Image head_on = render_eval_view(Bvh(facing), cam, color);
  CHECK(head_on.at(24, 24, 0) == doctest::Approx(0.85));
  CHECK(head_on.at(24, 24, 2) == doctest::Approx(0.30));
  CHECK(head_on.at(0, 0, 1) == 1.0);

  const TriangleMesh away = from_lists({{-1, -1, 0}, {0, 1, 0}, {1, -1, 0}}, {{{0, 1, 2}}});
  CHECK(render_eval_view(Bvh(away), cam, color).at(24, 24, 0) == 0.0);

  const double tilt = std::numbers::pi / 3.0;
  const TriangleMesh tilted =
      from_lists({{-1, -1, -std::tan(tilt) * -1}, {1, -1, -std::tan(tilt) * -1}, {0, 1, -std::tan(tilt) * 0 - 1}},
                 {{{0, 1, 2}}});
  const Bvh tb(tilted);
  const RayHit hit = tb.intersect(cam.origin_at(24.5, 24.5), cam.direction_at(24.5, 24.5));
  REQUIRE(hit.hit());
  const double expected = tilted.unit_normal(0).dot(Vec3::UnitZ());
  CHECK(render_eval_view(tb, cam, color).at(24, 24, 0) == doctest::Approx(0.85 * expected));

  const TriangleMesh sphere = icosphere(5);
  const render::Image img = render_eval_view(Bvh(sphere), cam, color);
  double se = 0.0;
  long n = 0;
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 48; ++x) {
      const Vec3 o = cam.origin_at(x + 0.5, y + 0.5);
      const double rho2 = o.x() * o.x() + o.y() * o.y();
      if (rho2 >= 0.95) continue;
      const double cosv = std::sqrt(1.0 - rho2);
      se += std::pow(img.at(x, y, 0) / color[0] - cosv, 2);
      ++n;
    }
  CHECK(std::sqrt(se / static_cast<double>(n)) < 0.02);
  CHECK_THROWS_AS((void)render_eval_view(Bvh(sphere), render::look_at_pinhole({0, 0, 3}, Vec3::Zero(), {0, 1, 0}, 40, 8, 8)),
                  ValidationError);
}

TEST_CASE("fibonacci views look at the origin from evenly spread directions") {
  const auto pts = fibonacci_sphere(100);
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : pts) {
    CHECK(p.norm() == doctest::Approx(1.0));
    mean += p;
  }
  CHECK(mean.norm() / 100.0 < 0.02);
  for (const auto& cam : fibonacci_views(12, 3.0, 2.4, 16)) {
    CHECK(cam.projection == render::Projection::kOrthographic);
    CHECK(cam.center().norm() == doctest::Approx(3.0));
    CHECK((cam.view_axis() + cam.center().normalized()).norm() < 1e-9);
  }
}

TEST_CASE("visible recall on a hemisphere reconstruction") {
  TriangleMesh ref = icosphere(4);
  ref.visible = flags_by_normal_z(ref, 0.0);
  std::vector<Eigen::Index> keep;
  std::vector<std::array<int, 3>> upper;
  for (Eigen::Index t = 0; t < ref.triangle_count(); ++t)
    if (ref.center(t).z() > 0.0) upper.push_back({ref.triangles(t, 0), ref.triangles(t, 1), ref.triangles(t, 2)});
  TriangleMesh recon = ref;
  recon.visible.clear();
  recon.triangles.resize(static_cast<Eigen::Index>(upper.size()), 3);
  for (std::size_t i = 0; i < upper.size(); ++i)
    recon.triangles.row(static_cast<Eigen::Index>(i)) << upper[i][0], upper[i][1], upper[i][2];

  EvalOptions opt;
  opt.spacing = 0.02;
  const MetricsReport r = evaluate_geometry(ref, recon, opt);
  REQUIRE(r.visible_recall.has_value());
  CHECK(*r.visible_recall > 0.99);
  CHECK(r.recall == doctest::Approx(0.5).epsilon(0.05));
  CHECK(r.precision == 1.0);

  const MetricsReport full = evaluate_geometry(ref, ref, opt);
  CHECK(*full.visible_recall == 1.0);
  CHECK(full.f_score == 1.0);

  ref.visible.assign(static_cast<std::size_t>(ref.triangle_count()), 1);
  const MetricsReport all = evaluate_geometry(ref, recon, opt);
  CHECK(*all.visible_recall == all.recall);

  ref.visible.assign(static_cast<std::size_t>(ref.triangle_count()), 0);
  CHECK_FALSE(evaluate_geometry(ref, recon, opt).visible_recall.has_value());
}

TEST_CASE("metrics are invariant to a joint rigid transform") {
  const TriangleMesh ref = icosphere(3);
  const TriangleMesh recon = transformed(icosphere(3), Vec3(-0.01, 0.0, 0.005), 1.01);
  EvalOptions opt;
  opt.spacing = 0.03;
  const MetricsReport a = evaluate_geometry(ref, recon, opt);
  const Mat3 rot = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  const Vec3 shift(4.0, -2.0, 1.0);
  const MetricsReport b =
      evaluate_geometry(rigid_transformed(ref, rot, shift), rigid_transformed(recon, rot, shift), opt);
  CHECK(std::abs(a.precision - b.precision) < 1e-6);
  CHECK(std::abs(a.recall - b.recall) < 1e-6);
  CHECK(std::abs(a.f_score - b.f_score) < 1e-6);
  CHECK(a.precision > 0.3);
}

TEST_CASE("metrics report json lists every field") {
  MetricsReport r;
  r.precision = 0.5;
  r.recall = 1.0;
  r.f_score = 2.0 / 3.0;
  const std::string j = r.to_json();
  for (const char* key : {"precision", "recall", "f_score", "visible_recall", "threshold", "spacing", "counts"})
    CHECK(j.find(key) != std::string::npos);
  CHECK(j.find("null") != std::string::npos);
}

TEST_CASE("obj and ply round trips") {
  TriangleMesh m = icosphere(1, 0.7, Vec3(0.1, 0.2, 0.3));
  for (const char* ext : {".obj", ".ply"}) {
    const auto path = temp_path(std::string("roundtrip") + ext);
    write_mesh(path, m);
    const TriangleMesh back = read_mesh(path);
    CHECK(back.vertices == m.vertices);
    CHECK(back.triangles == m.triangles);
    std::filesystem::remove(path);
  }
  CHECK_THROWS_AS(write_mesh(temp_path("x.stl"), m), ValidationError);
  CHECK_THROWS_AS((void)read_mesh(temp_path("missing.obj")), RuntimeError);
}

TEST_CASE("obj reader handles quads, slashes and negative indices") {
  const auto path = temp_path("quad.obj");
  {
    std::ofstream os(path);
    os << "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 -1//1\n";
  }
  const TriangleMesh m = read_obj(path);
  CHECK(m.triangle_count() == 2);
  CHECK(m.area() == doctest::Approx(1.0));
  {
    std::ofstream os(path);
    os << "v 0 0 0\nf 1 2 3\n";
  }
  CHECK_THROWS_AS((void)read_obj(path), RuntimeError);
  std::filesystem::remove(path);
}
