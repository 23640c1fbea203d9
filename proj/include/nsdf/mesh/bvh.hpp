#pragma once

#include <limits>
#include <optional>
#include <vector>

#include "nsdf/mesh/mesh.hpp"

namespace nsdf::mesh {

/// Squared distance from p to triangle (a, b, c); `closest` receives the nearest point.
double point_triangle_distance2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c, Vec3* closest = nullptr);

/// Ray parameter of the hit with triangle (a, b, c), two-sided; empty when missing or t <= t_min.
std::optional<double> ray_triangle(const Vec3& origin, const Vec3& dir, const Vec3& a, const Vec3& b, const Vec3& c,
                                   double t_min = 0.0);

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  int triangle = -1;
  [[nodiscard]] bool hit() const { return triangle >= 0; }
};

struct ClosestPoint {
  double distance2 = std::numeric_limits<double>::infinity();
  int triangle = -1;
  Vec3 point = Vec3::Zero();
};

/// Bounding volume hierarchy over a mesh's triangles (median split, small leaves).
class Bvh {
 public:
  explicit Bvh(const TriangleMesh& mesh);

  [[nodiscard]] ClosestPoint closest(const Vec3& p) const;
  /// Nearest hit with t in (t_min, t_max); `skip` excludes one triangle.
  [[nodiscard]] RayHit intersect(const Vec3& origin, const Vec3& dir, double t_min = 0.0,
                                 double t_max = std::numeric_limits<double>::infinity(), int skip = -1) const;
  [[nodiscard]] const TriangleMesh& mesh() const { return *mesh_; }

 private:
  struct Node {
    Vec3 lo;
    Vec3 hi;
    int left = -1;  // child index, or -1 for a leaf
    int right = -1;
    int begin = 0;  // leaf range into order_
    int end = 0;
  };
  int build(int begin, int end);

  const TriangleMesh* mesh_;
  std::vector<Node> nodes_;
  std::vector<int> order_;
  std::vector<Vec3> centers_;
};

/// O(n) references used to audit the BVH.
ClosestPoint brute_force_closest(const TriangleMesh& mesh, const Vec3& p);
RayHit brute_force_intersect(const TriangleMesh& mesh, const Vec3& origin, const Vec3& dir, double t_min = 0.0,
                             double t_max = std::numeric_limits<double>::infinity(), int skip = -1);

}  // namespace nsdf::mesh
