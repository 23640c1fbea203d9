#include "nsdf/mesh/bvh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

namespace nsdf::mesh {

// Ericson's region-based closest point on a triangle.
double point_triangle_distance2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c, Vec3* closest) {
  const Vec3 ab = b - a;
  const Vec3 ac = c - a;
  const Vec3 ap = p - a;
  Vec3 q;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  const double vc = d1 * d4 - d3 * d2;
  const double vb = d5 * d2 - d1 * d6;
  const double va = d3 * d6 - d5 * d4;
  if (d1 <= 0.0 && d2 <= 0.0) {
    q = a;
  } else if (d3 >= 0.0 && d4 <= d3) {
    q = b;
  } else if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    q = a + (d1 / (d1 - d3)) * ab;
  } else if (d6 >= 0.0 && d5 <= d6) {
    q = c;
  } else if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    q = a + (d2 / (d2 - d6)) * ac;
  } else if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    q = b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  } else {
    const double denom = va + vb + vc;
    if (denom <= 0.0) {
      // Degenerate triangle: fall back to its edges.
      Vec3 best = a;
      double bd = (p - a).squaredNorm();
      for (const auto& [u, v] : {std::pair<Vec3, Vec3>{a, b}, {b, c}, {c, a}}) {
        const Vec3 e = v - u;
        const double len2 = e.squaredNorm();
        const double t = len2 > 0.0 ? std::clamp((p - u).dot(e) / len2, 0.0, 1.0) : 0.0;
        const Vec3 s = u + t * e;
        const double d = (p - s).squaredNorm();
        if (d < bd) {
          bd = d;
          best = s;
        }
      }
      q = best;
    } else {
      q = a + ab * (vb / denom) + ac * (vc / denom);
    }
  }
  if (closest) *closest = q;
  return (p - q).squaredNorm();
}

// Moller-Trumbore, both faces.
std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c,
                                   double t_min) {
  const Vec3 e1 = b - a;
  const Vec3 e2 = c - a;
  const Vec3 pv = dir.cross(e2);
  const double det = e1.dot(pv);
  if (det == 0.0 || !std::isfinite(det)) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 tv = origin - a;
  const double u = tv.dot(pv) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 qv = tv.cross(e1);
  const double v = dir.dot(qv) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(qv) * inv;
  if (!(t > t_min)) return std::nullopt;
  return t;
}

namespace {

constexpr int kLeafSize = 4;

double box_distance2(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(0.0);
  return d.squaredNorm();
}

// Slab test; returns the entry parameter or +inf on a miss.
double box_entry(const Vec3& origin, const Vec3& inv_dir, const Vec3& lo, const Vec3& hi, double t_min, double t_max) {
  double t0 = t_min;
  double t1 = t_max;
  for (int k = 0; k < 3; ++k) {
    double a = (lo[k] - origin[k]) * inv_dir[k];
    double b = (hi[k] - origin[k]) * inv_dir[k];
    if (std::isnan(a) || std::isnan(b)) {
      // Ray parallel to the slab and starting on its plane.
      if (origin[k] < lo[k] || origin[k] > hi[k]) return std::numeric_limits<double>::infinity();
      continue;
    }
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0;
}

}  // namespace

Bvh::Bvh(const TriangleMesh& mesh) : mesh_(&mesh) {
  mesh.validate();
  const auto n = static_cast<int>(mesh.triangle_count());
  order_.resize(static_cast<std::size_t>(n));
  centers_.resize(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) {
    order_[static_cast<std::size_t>(t)] = t;
    centers_[static_cast<std::size_t>(t)] = mesh.center(t);
  }
  if (n > 0) {
    nodes_.reserve(static_cast<std::size_t>(2 * n / kLeafSize + 2));
    build(0, n);
  }
}

int Bvh::build(int begin, int end) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  Vec3 clo = node.lo;
  Vec3 chi = node.hi;
  for (int i = begin; i < end; ++i) {
    const int t = order_[static_cast<std::size_t>(i)];
    for (int k = 0; k < 3; ++k) {
      const Vec3 v = mesh_->corner(t, k);
      node.lo = node.lo.cwiseMin(v);
      node.hi = node.hi.cwiseMax(v);
    }
    clo = clo.cwiseMin(centers_[static_cast<std::size_t>(t)]);
    chi = chi.cwiseMax(centers_[static_cast<std::size_t>(t)]);
  }
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= kLeafSize) {
    nodes_[static_cast<std::size_t>(id)].begin = begin;
    nodes_[static_cast<std::size_t>(id)].end = end;
    return id;
  }
  int axis = 0;
  (chi - clo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end, [&](int a, int b) {
    const double ca = centers_[static_cast<std::size_t>(a)][axis];
    const double cb = centers_[static_cast<std::size_t>(b)][axis];
    return ca < cb || (ca == cb && a < b);
  });
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

ClosestPoint Bvh::closest(const Vec3& p) const {
  ClosestPoint best;
  if (nodes_.empty()) return best;
  std::vector<std::pair<double, int>> stack;
  stack.emplace_back(box_distance2(p, nodes_[0].lo, nodes_[0].hi), 0);
  while (!stack.empty()) {
    const auto [d, id] = stack.back();
    stack.pop_back();
    if (d > best.distance2) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int t = order_[static_cast<std::size_t>(i)];
        Vec3 q;
        const double d2 = point_triangle_distance2(p, mesh_->corner(t, 0), mesh_->corner(t, 1), mesh_->corner(t, 2), &q);
        if (d2 < best.distance2 || (d2 == best.distance2 && t < best.triangle)) best = {d2, t, q};
      }
      continue;
    }
    const double dl = box_distance2(p, nodes_[static_cast<std::size_t>(node.left)].lo,
                                    nodes_[static_cast<std::size_t>(node.left)].hi);
    const double dr = box_distance2(p, nodes_[static_cast<std::size_t>(node.right)].lo,
                                    nodes_[static_cast<std::size_t>(node.right)].hi);
    // Push the farther child first so the nearer one is visited next.
    if (dl < dr) {
      stack.emplace_back(dr, node.right);
      stack.emplace_back(dl, node.left);
    } else {
      stack.emplace_back(dl, node.left);
      stack.emplace_back(dr, node.right);
    }
  }
  return best;
}

RayHit Bvh::intersect(const Vec3& origin, const Vec3& dir, double t_min, double t_max, int skip) const {
  RayHit best;
  best.t = t_max;
  if (nodes_.empty()) return {};
  const Vec3 inv_dir = dir.cwiseInverse();
  std::vector<std::pair<double, int>> stack;
  const double root = box_entry(origin, inv_dir, nodes_[0].lo, nodes_[0].hi, t_min, t_max);
  if (std::isfinite(root)) stack.emplace_back(root, 0);
  while (!stack.empty()) {
    const auto [entry, id] = stack.back();
    stack.pop_back();
    if (entry > best.t) continue;
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int t = order_[static_cast<std::size_t>(i)];
        if (t == skip) continue;
        const auto hit = ray_triangle(origin, dir, mesh_->corner(t, 0), mesh_->corner(t, 1), mesh_->corner(t, 2), t_min);
        if (hit && *hit < t_max && (*hit < best.t || (*hit == best.t && t < best.triangle))) best = {*hit, t};
      }
      continue;
    }
    const Node& l = nodes_[static_cast<std::size_t>(node.left)];
    const Node& r = nodes_[static_cast<std::size_t>(node.right)];
    const double el = box_entry(origin, inv_dir, l.lo, l.hi, t_min, best.t);
    const double er = box_entry(origin, inv_dir, r.lo, r.hi, t_min, best.t);
    if (el < er) {
      if (std::isfinite(er)) stack.emplace_back(er, node.right);
      stack.emplace_back(el, node.left);
    } else {
      if (std::isfinite(el)) stack.emplace_back(el, node.left);
      if (std::isfinite(er)) stack.emplace_back(er, node.right);
    }
  }
  if (best.triangle < 0) return {};
  return best;
}

ClosestPoint brute_force_closest(const TriangleMesh& mesh, const Vec3& p) {
  ClosestPoint best;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    Vec3 q;
    const double d2 = point_triangle_distance2(p, mesh.corner(t, 0), mesh.corner(t, 1), mesh.corner(t, 2), &q);
    if (d2 < best.distance2) best = {d2, static_cast<int>(t), q};
  }
  return best;
}

RayHit brute_force_intersect(const TriangleMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min, double t_max,
                             int skip) {
  RayHit best;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    if (t == skip) continue;
    const auto hit = ray_triangle(origin, dir, mesh.corner(t, 0), mesh.corner(t, 1), mesh.corner(t, 2), t_min);
    if (hit && *hit < t_max && *hit < best.t) best = {*hit, static_cast<int>(t)};
  }
  return best;
}

}  // namespace nsdf::mesh
