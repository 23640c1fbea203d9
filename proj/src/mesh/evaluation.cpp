#include "nsdf/mesh/evaluation.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <cmath>
#include <list>
#include <numbers>
#include <numeric>
#include <random>
#include <unordered_map>

#include <Eigen/LU>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace nsdf::mesh {

// ---- connected components ---------------------------------------------------

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }
};

TriangleMesh subset(const TriangleMesh& mesh, const std::vector<Eigen::Index>& keep) {
  TriangleMesh out;
  out.vertices = mesh.vertices;
  out.triangles.resize(static_cast<Eigen::Index>(keep.size()), 3);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.triangles.row(static_cast<Eigen::Index>(i)) = mesh.triangles.row(keep[i]);
    if (!mesh.visible.empty()) out.visible.push_back(mesh.visible[static_cast<std::size_t>(keep[i])]);
  }
  return cleanup(out);
}

}  // namespace

std::vector<int> triangle_components(const TriangleMesh& mesh) {
  mesh.validate();
  UnionFind uf(static_cast<std::size_t>(mesh.vertex_count()));
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    uf.unite(mesh.triangles(t, 0), mesh.triangles(t, 1));
    uf.unite(mesh.triangles(t, 0), mesh.triangles(t, 2));
  }
  std::unordered_map<int, int> ids;
  std::vector<int> out(static_cast<std::size_t>(mesh.triangle_count()));
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const int root = uf.find(mesh.triangles(t, 0));
    out[static_cast<std::size_t>(t)] = ids.try_emplace(root, static_cast<int>(ids.size())).first->second;
  }
  return out;
}

TriangleMesh largest_component(const TriangleMesh& mesh) {
  if (mesh.empty()) return {};
  const std::vector<int> comp = triangle_components(mesh);
  const int n = *std::max_element(comp.begin(), comp.end()) + 1;
  std::vector<long> count(static_cast<std::size_t>(n), 0);
  std::vector<double> area(static_cast<std::size_t>(n), 0.0);
  std::vector<int> first_vertex(static_cast<std::size_t>(n), std::numeric_limits<int>::max());
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const auto c = static_cast<std::size_t>(comp[static_cast<std::size_t>(t)]);
    ++count[c];
    area[c] += mesh.triangle_area(t);
    first_vertex[c] = std::min(first_vertex[c], mesh.triangles.row(t).minCoeff());
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < static_cast<std::size_t>(n); ++c) {
    const bool better = count[c] != count[best] ? count[c] > count[best]
                        : area[c] != area[best] ? area[c] > area[best]
                                                : first_vertex[c] < first_vertex[best];
    if (better) best = c;
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t)
    if (static_cast<std::size_t>(comp[static_cast<std::size_t>(t)]) == best) keep.push_back(t);
  return subset(mesh, keep);
}

// ---- minimal enclosing sphere -----------------------------------------------

namespace {

bool contains(const Sphere& s, const Vec3& p) {
  return (p - s.center).squaredNorm() <= s.radius * s.radius * (1.0 + 1e-12) + 1e-30;
}

Sphere from_two(const Vec3& a, const Vec3& b) { return {0.5 * (a + b), 0.5 * (a - b).norm()}; }

std::optional<Sphere> circumcircle(const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 n = ab.cross(ac);
  const double n2 = n.squaredNorm();
  if (n2 <= 1e-24 * ab.squaredNorm() * ac.squaredNorm()) return std::nullopt;
  const Vec3 off = (ac.squaredNorm() * n.cross(ab) + ab.squaredNorm() * ac.cross(n)) / (2.0 * n2);
  return Sphere{a + off, off.norm()};
}

std::optional<Sphere> circumsphere(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  Mat3 m;
  m.row(0) = (b - a).transpose();
  m.row(1) = (c - a).transpose();
  m.row(2) = (d - a).transpose();
  const double scale = m.rowwise().norm().prod();
  const double det = m.determinant();
  if (std::abs(det) <= 1e-12 * scale) return std::nullopt;
  const Vec3 rhs(0.5 * m.row(0).squaredNorm(), 0.5 * m.row(1).squaredNorm(), 0.5 * m.row(2).squaredNorm());
  const Vec3 off = m.partialPivLu().solve(rhs);
  return Sphere{a + off, off.norm()};
}

// Smallest sphere containing all of `pts` among those spanned by pairs and triples (degenerate supports).
Sphere smallest_of_subsets(const std::vector<Vec3>& pts) {
  Sphere best{pts[0], std::numeric_limits<double>::infinity()};
  auto consider = [&](const Sphere& s) {
    if (s.radius >= best.radius) return;
    for (const Vec3& p : pts)
      if (!contains(s, p)) return;
    best = s;
  };
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      consider(from_two(pts[i], pts[j]));
      for (std::size_t k = j + 1; k < pts.size(); ++k)
        if (auto s = circumcircle(pts[i], pts[j], pts[k])) consider(*s);
    }
  if (!std::isfinite(best.radius)) best = {pts[0], 0.0};
  return best;
}

Sphere ball_of(const std::vector<Vec3>& support) {
  switch (support.size()) {
    case 0:
      return {Vec3::Zero(), -1.0};
    case 1:
      return {support[0], 0.0};
    case 2:
      return from_two(support[0], support[1]);
    case 3:
      if (auto s = circumcircle(support[0], support[1], support[2])) return *s;
      return smallest_of_subsets(support);
    default:
      if (auto s = circumsphere(support[0], support[1], support[2], support[3])) return *s;
      return smallest_of_subsets(support);
  }
}

void move_to_front(std::list<Vec3>& pts, std::list<Vec3>::iterator end, std::vector<Vec3>& support, Sphere& ball) {
  ball = ball_of(support);
  if (support.size() == 4) return;
  for (auto it = pts.begin(); it != end;) {
    auto next = std::next(it);
    if (ball.radius < 0.0 || !contains(ball, *it)) {
      support.push_back(*it);
      move_to_front(pts, it, support, ball);
      support.pop_back();
      pts.splice(pts.begin(), pts, it);
    }
    it = next;
  }
}

}  // namespace

Sphere minimal_enclosing_sphere(const std::vector<Vec3>& points) {
  require(!points.empty(), "minimal_enclosing_sphere: no points");
  std::vector<Vec3> shuffled = points;
  std::mt19937_64 rng(0x5eed);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::list<Vec3> pts(shuffled.begin(), shuffled.end());
  std::vector<Vec3> support;
  Sphere ball;
  move_to_front(pts, pts.end(), support, ball);
  return ball;
}

NormalizedPair normalize_pair(const TriangleMesh& reference, const TriangleMesh& reconstructed) {
  require(!reference.empty(), "normalize_pair: empty reference mesh");
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(reference.vertex_count()));
  for (Eigen::Index i = 0; i < reference.vertex_count(); ++i) pts.push_back(reference.vertex(i));
  const Sphere s = minimal_enclosing_sphere(pts);
  require(s.radius > 0.0, "normalize_pair: reference has zero extent");
  NormalizedPair out;
  out.transform = {s.center, 1.0 / s.radius};
  out.reference = transformed(reference, s.center, out.transform.scale);
  out.reconstructed = transformed(reconstructed, s.center, out.transform.scale);
  return out;
}

// ---- resampling -------------------------------------------------------------

double expected_sample_count(double area, double spacing) {
  return area / (spacing * spacing * std::sqrt(3.0) / 2.0 * std::numbers::pi / 4.0);
}

namespace {

struct CellKey {
  long x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    return static_cast<std::size_t>(k.x * 73856093L ^ k.y * 19349663L ^ k.z * 83492791L);
  }
};

// Projection axes (3 coordinate, 6 face-diagonal, 4 body-diagonal) with an orthonormal plane basis each,
// built in frame coordinates so that ties resolve identically under rotation.
struct ProjectionAxis {
  Vec3 d, pu, pv;
};

std::array<ProjectionAxis, 13> projection_axes(const Mat3& frame) {
  const double a[13][3] = {{1, 0, 0},  {0, 1, 0},  {0, 0, 1},  {1, 1, 0}, {1, -1, 0}, {1, 0, 1},  {1, 0, -1},
                           {0, 1, 1}, {0, 1, -1}, {1, 1, 1}, {1, 1, -1}, {1, -1, 1}, {-1, 1, 1}};
  std::array<ProjectionAxis, 13> out;
  for (std::size_t k = 0; k < 13; ++k) {
    const Vec3 d = Vec3(a[k][0], a[k][1], a[k][2]).normalized();
    Eigen::Index weakest = 0;
    d.cwiseAbs().minCoeff(&weakest);
    const Vec3 h = Vec3::Unit(weakest);
    const Vec3 pu = (h - h.dot(d) * d).normalized();
    out[k] = {frame * d, frame * pu, frame * d.cross(pu)};
  }
  return out;
}

}  // namespace

SurfaceSamples resample_surface(const TriangleMesh& mesh, double spacing, std::uint64_t seed) {
  require(spacing > 0.0, "resample_surface: spacing must be > 0");
  mesh.validate();
  SurfaceSamples out;
  out.spacing = spacing;
  if (mesh.empty()) return out;

  // Frame attached to the first non-degenerate triangle keeps the result rigid-equivariant.
  Mat3 frame = Mat3::Identity();
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const Vec3 n = mesh.cross(t);
    if (n.squaredNorm() == 0.0) continue;
    const Vec3 e1 = (mesh.corner(t, 1) - mesh.corner(t, 0)).normalized();
    const Vec3 e3 = n.normalized();
    frame.col(0) = e1;
    frame.col(1) = e3.cross(e1);
    frame.col(2) = e3;
    break;
  }
  const auto axes = projection_axes(frame);
  const Vec3 anchor = mesh.vertex(0);

  // Each axis owns one hexagonal lattice in its orthogonal plane.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double pitch = spacing * (1.0 + 1e-9);
  struct Lattice {
    Vec3 pu, pv;              // plane basis
    Eigen::Matrix2d inv;      // plane coords -> lattice coords
    Eigen::Vector2d u, v, o;  // lattice vectors and offset in plane coords
  };
  std::array<Lattice, 13> lat;
  for (std::size_t k = 0; k < 13; ++k) {
    lat[k].pu = axes[k].pu;
    lat[k].pv = axes[k].pv;
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    lat[k].u = pitch * Eigen::Vector2d(std::cos(theta), std::sin(theta));
    lat[k].v = pitch * Eigen::Vector2d(std::cos(theta + std::numbers::pi / 3.0), std::sin(theta + std::numbers::pi / 3.0));
    lat[k].o = unit(rng) * lat[k].u + unit(rng) * lat[k].v;
    Eigen::Matrix2d basis;
    basis << lat[k].u, lat[k].v;
    lat[k].inv = basis.inverse();
  }

  std::vector<int> cls(static_cast<std::size_t>(mesh.triangle_count()), -1);
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const Vec3 n = mesh.unit_normal(t);
    if (n.isZero(0.0)) continue;
    double best = -1.0;
    for (std::size_t k = 0; k < 13; ++k) {
      // The margin keeps near-ties stable under rounding.
      const double c = std::abs(n.dot(axes[k].d));
      if (c > best + 1e-9) {
        best = c;
        cls[static_cast<std::size_t>(t)] = static_cast<int>(k);
      }
    }
  }
  std::unordered_map<CellKey, int, CellHash> head;  // cell -> last accepted sample
  std::vector<int> next;                            // chain within a cell
  std::vector<Vec3> kept;
  std::vector<int> kept_tri;
  const double s2 = spacing * spacing;
  auto cell_of = [spacing](const Vec3& p) {
    return CellKey{static_cast<long>(std::floor(p.x() / spacing)), static_cast<long>(std::floor(p.y() / spacing)),
                   static_cast<long>(std::floor(p.z() / spacing))};
  };
  auto offer = [&](const Vec3& p, int tri) {
    const CellKey k = cell_of(p);
    for (long dz = -1; dz <= 1; ++dz)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const auto it = head.find({k.x + dx, k.y + dy, k.z + dz});
          if (it == head.end()) continue;
          for (int q = it->second; q >= 0; q = next[static_cast<std::size_t>(q)])
            if ((kept[static_cast<std::size_t>(q)] - p).squaredNorm() < s2) return;
        }
    const int id = static_cast<int>(kept.size());
    kept.push_back(p);
    kept_tri.push_back(tri);
    auto [it, inserted] = head.try_emplace(k, id);
    next.push_back(inserted ? -1 : it->second);
    if (!inserted) it->second = id;
  };

  for (int k = 0; k < 13; ++k) {
    const Lattice& L = lat[static_cast<std::size_t>(k)];
    for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
      if (cls[static_cast<std::size_t>(t)] != k) continue;
      const Vec3 a = mesh.corner(t, 0) - anchor;
      const Vec3 b = mesh.corner(t, 1) - anchor;
      const Vec3 c = mesh.corner(t, 2) - anchor;
      const Eigen::Vector2d pa(a.dot(L.pu), a.dot(L.pv));
      const Eigen::Vector2d pb(b.dot(L.pu), b.dot(L.pv));
      const Eigen::Vector2d pc(c.dot(L.pu), c.dot(L.pv));
      Eigen::Vector2d lo = Eigen::Vector2d::Constant(std::numeric_limits<double>::infinity());
      Eigen::Vector2d hi = -lo;
      for (const auto& q : {pa, pb, pc}) {
        const Eigen::Vector2d g = L.inv * (q - L.o);
        lo = lo.cwiseMin(g);
        hi = hi.cwiseMax(g);
      }
      const Eigen::Vector2d e1 = pb - pa;
      const Eigen::Vector2d e2 = pc - pa;
      const double det = e1.x() * e2.y() - e1.y() * e2.x();
      for (long i = static_cast<long>(std::floor(lo.x())); i <= static_cast<long>(std::ceil(hi.x())); ++i)
        for (long j = static_cast<long>(std::floor(lo.y())); j <= static_cast<long>(std::ceil(hi.y())); ++j) {
          const Eigen::Vector2d r = L.o + static_cast<double>(i) * L.u + static_cast<double>(j) * L.v - pa;
          const double bv = (r.x() * e2.y() - r.y() * e2.x()) / det;
          const double bw = (e1.x() * r.y() - e1.y() * r.x()) / det;
          if (bv < 0.0 || bw < 0.0 || bv + bw > 1.0) continue;
          offer(anchor + a + bv * (b - a) + bw * (c - a), static_cast<int>(t));
        }
    }
  }

  if (kept.empty()) {
    Eigen::Index largest = 0;
    for (Eigen::Index t = 1; t < mesh.triangle_count(); ++t)
      if (mesh.triangle_area(t) > mesh.triangle_area(largest)) largest = t;
    kept.push_back(mesh.center(largest));
    kept_tri.push_back(static_cast<int>(largest));
  }

  out.points.resize(static_cast<Eigen::Index>(kept.size()), 3);
  for (std::size_t i = 0; i < kept.size(); ++i) out.points.row(static_cast<Eigen::Index>(i)) = kept[i].transpose();
  out.source_triangle = std::move(kept_tri);
  return out;
}

// ---- metrics ----------------------------------------------------------------

VecX distances_to(const SurfaceSamples& samples, const Bvh& target) {
  VecX d(samples.size());
  for (Eigen::Index i = 0; i < samples.size(); ++i)
    d[i] = std::sqrt(target.closest(samples.points.row(i).transpose()).distance2);
  return d;
}

double fraction_within(const SurfaceSamples& samples, const Bvh& target, double threshold) {
  if (samples.size() == 0) return 0.0;
  const VecX d = distances_to(samples, target);
  return static_cast<double>((d.array() < threshold).count()) / static_cast<double>(d.size());
}

PrecisionRecall precision_recall(const SurfaceSamples& recon, const Bvh& recon_mesh, const SurfaceSamples& ref,
                                 const Bvh& ref_mesh, double threshold) {
  return {fraction_within(recon, ref_mesh, threshold), fraction_within(ref, recon_mesh, threshold)};
}

double f_score(double precision, double recall) {
  require(precision >= 0.0 && precision <= 1.0 && recall >= 0.0 && recall <= 1.0, "f_score: inputs must be in [0, 1]");
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

std::optional<double> recall_visible(const Bvh& recon_mesh, const SurfaceSamples& ref,
                                     const std::vector<std::uint8_t>& flags, double threshold) {
  long total = 0;
  long hit = 0;
  for (Eigen::Index i = 0; i < ref.size(); ++i) {
    const auto src = static_cast<std::size_t>(ref.source_triangle[static_cast<std::size_t>(i)]);
    require(src < flags.size(), "recall_visible: flags do not cover the sample's source triangle");
    if (!flags[src]) continue;
    ++total;
    hit += std::sqrt(recon_mesh.closest(ref.points.row(i).transpose()).distance2) < threshold;
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(total);
}

// ---- visibility -------------------------------------------------------------

bool triangle_visible_from(const Bvh& bvh, Eigen::Index triangle, const render::Camera& camera) {
  const TriangleMesh& mesh = bvh.mesh();
  const Vec3 c = mesh.center(triangle);
  const Vec3 n = mesh.unit_normal(triangle);
  if (n.isZero(0.0)) return false;
  const bool ortho = camera.projection == render::Projection::kOrthographic;
  const Vec3 toward = ortho ? Vec3(-camera.view_axis()) : Vec3(camera.center() - c);
  if (n.dot(toward) <= 0.0) return false;
  const auto px = camera.project(c);
  if (!px || px->first < 0.0 || px->second < 0.0 || px->first >= camera.width || px->second >= camera.height)
    return false;
  const Vec3 origin = c + 1e-6 * n;
  const Vec3 to_eye = ortho ? toward : Vec3(camera.center() - origin);
  const double t_max = ortho ? std::numeric_limits<double>::infinity() : to_eye.norm();
  const Vec3 dir = to_eye.normalized();
  return !bvh.intersect(origin, dir, 0.0, t_max, static_cast<int>(triangle)).hit();
}

std::vector<std::uint8_t> mark_visible(const TriangleMesh& reference, const std::vector<render::Camera>& views,
                                       int min_views) {
  require(!views.empty(), "mark_visible: at least one view is required");
  const Bvh bvh(reference);
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(reference.triangle_count()), 0);
  for (Eigen::Index t = 0; t < reference.triangle_count(); ++t) {
    int count = 0;
    for (const auto& cam : views) count += triangle_visible_from(bvh, t, cam);
    flags[static_cast<std::size_t>(t)] = count >= min_views;
  }
  return flags;
}

std::vector<int> triangle_id_buffer(const Bvh& bvh, const render::Camera& camera) {
  std::vector<int> ids(static_cast<std::size_t>(camera.width) * static_cast<std::size_t>(camera.height), -1);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      const double u = x + 0.5;
      const double v = y + 0.5;
      ids[static_cast<std::size_t>(y) * static_cast<std::size_t>(camera.width) + static_cast<std::size_t>(x)] =
          bvh.intersect(camera.origin_at(u, v), camera.direction_at(u, v)).triangle;
    }
  return ids;
}

ViewSelection select_unobserved_eval_views(const std::vector<render::Camera>& views, const TriangleMesh& reference,
                                           double max_fraction) {
  require(static_cast<Eigen::Index>(reference.visible.size()) == reference.triangle_count(),
          "select_unobserved_eval_views: reference has no visibility flags");
  const Bvh bvh(reference);
  ViewSelection sel;
  for (std::size_t i = 0; i < views.size(); ++i) {
    long object = 0;
    long flagged = 0;
    for (int id : triangle_id_buffer(bvh, views[i])) {
      if (id < 0) continue;
      ++object;
      flagged += reference.visible[static_cast<std::size_t>(id)] != 0;
    }
    if (object == 0) {
      spdlog::info("eval view {} sees no object pixel; discarded", i);
      sel.visible_fraction.push_back(std::numeric_limits<double>::quiet_NaN());
      sel.discarded.push_back(i);
      continue;
    }
    const double frac = static_cast<double>(flagged) / static_cast<double>(object);
    sel.visible_fraction.push_back(frac);
    (frac <= max_fraction ? sel.kept : sel.discarded).push_back(i);
  }
  return sel;
}

render::Image render_eval_view(const Bvh& bvh, const render::Camera& camera, const Vec3& color) {
  require(camera.projection == render::Projection::kOrthographic, "render_eval_view: orthographic camera required");
  const Vec3 light = -camera.view_axis();
  render::Image img(camera.width, camera.height, 3, 1.0);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) {
      const RayHit hit = bvh.intersect(camera.origin_at(x + 0.5, y + 0.5), camera.direction_at(x + 0.5, y + 0.5));
      if (!hit.hit()) continue;
      const double shade = std::max(bvh.mesh().unit_normal(hit.triangle).dot(light), 0.0);
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = color[c] * shade;
    }
  return img;
}

std::vector<Vec3> fibonacci_sphere(int count) {
  require(count >= 1, "fibonacci_sphere: count must be >= 1");
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vec3> pts;
  for (int i = 0; i < count; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / count;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    pts.emplace_back(r * std::cos(golden * i), r * std::sin(golden * i), z);
  }
  return pts;
}

std::vector<render::Camera> fibonacci_views(int count, double distance, double extent, int resolution) {
  std::vector<render::Camera> cams;
  for (const Vec3& d : fibonacci_sphere(count)) {
    const Vec3 up = std::abs(d.z()) > 0.99 ? Vec3::UnitY() : Vec3::UnitZ();
    cams.push_back(render::look_at_orthographic(distance * d, Vec3::Zero(), up, extent, resolution, resolution));
  }
  return cams;
}

// ---- full protocol ----------------------------------------------------------

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f_score"] = f_score;
  j["visible_recall"] = visible_recall ? nlohmann::ordered_json(*visible_recall) : nlohmann::ordered_json(nullptr);
  j["threshold"] = threshold;
  j["spacing"] = spacing;
  j["counts"] = {{"recon_samples", recon_samples},
                 {"reference_samples", reference_samples},
                 {"visible_reference_samples", visible_reference_samples},
                 {"reference_triangles", reference_triangles},
                 {"visible_triangles", visible_triangles},
                 {"recon_triangles", recon_triangles}};
  return j.dump(2);
}

MetricsReport evaluate_geometry(const TriangleMesh& reference, const TriangleMesh& reconstructed,
                                const EvalOptions& options) {
  require(options.threshold > 0.0, "evaluate_geometry: threshold must be > 0");
  const TriangleMesh ref_clean = cleanup(reference);
  TriangleMesh recon_clean = cleanup(reconstructed);
  if (options.keep_largest_component) recon_clean = largest_component(recon_clean);
  const NormalizedPair pair = normalize_pair(ref_clean, recon_clean);

  const SurfaceSamples ref_s = resample_surface(pair.reference, options.spacing, options.seed);
  const SurfaceSamples rec_s = resample_surface(pair.reconstructed, options.spacing, options.seed + 1);
  const Bvh ref_bvh(pair.reference);
  const Bvh rec_bvh(pair.reconstructed);

  MetricsReport r;
  const PrecisionRecall pr = precision_recall(rec_s, rec_bvh, ref_s, ref_bvh, options.threshold);
  r.precision = pr.precision;
  r.recall = pr.recall;
  r.f_score = f_score(pr.precision, pr.recall);
  r.threshold = options.threshold;
  r.spacing = options.spacing;
  r.recon_samples = static_cast<long>(rec_s.size());
  r.reference_samples = static_cast<long>(ref_s.size());
  r.reference_triangles = static_cast<long>(pair.reference.triangle_count());
  r.recon_triangles = static_cast<long>(pair.reconstructed.triangle_count());
  if (!pair.reference.visible.empty()) {
    const auto& flags = pair.reference.visible;
    r.visible_triangles = static_cast<long>(std::count(flags.begin(), flags.end(), 1));
    for (int src : ref_s.source_triangle) r.visible_reference_samples += flags[static_cast<std::size_t>(src)] != 0;
    r.visible_recall = recall_visible(rec_bvh, ref_s, flags, options.threshold);
  }
  return r;
}

}  // namespace nsdf::mesh
