#include "nsdf/mesh/marching_cubes.hpp"

#include <array>
#include <cmath>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "nsdf/mesh/mc_tables.hpp"

namespace nsdf::mesh {

namespace {

// Corner offsets and edge endpoints in table order.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

TriangleMesh marching_cubes(const VecX& values, int n, const Bounds& bounds) {
  require(n >= 1, "marching_cubes: resolution must be >= 1");
  const long m = n + 1;
  require(values.size() == m * m * m, "marching_cubes: expected (n+1)^3 values");
  require((bounds.hi.array() > bounds.lo.array()).all(), "marching_cubes: empty bounds");
  if (!values.allFinite()) throw RuntimeError("marching_cubes: non-finite field value");

  const Vec3 step = (bounds.hi - bounds.lo) / n;
  auto index = [m](long x, long y, long z) { return x + m * (y + m * z); };
  auto position = [&](long x, long y, long z) {
    return Vec3(bounds.lo.x() + step.x() * static_cast<double>(x), bounds.lo.y() + step.y() * static_cast<double>(y),
                bounds.lo.z() + step.z() * static_cast<double>(z));
  };

  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  std::unordered_map<long, int> edge_vertex;  // (grid vertex, axis) -> mesh vertex

  auto vertex_on = [&](long x0, long y0, long z0, long x1, long y1, long z1) {
    long a = index(x0, y0, z0);
    long b = index(x1, y1, z1);
    if (a > b) {
      std::swap(a, b);
      std::swap(x0, x1);
      std::swap(y0, y1);
      std::swap(z0, z1);
    }
    const int axis = x0 != x1 ? 0 : (y0 != y1 ? 1 : 2);
    const long key = a * 3 + axis;
    const auto it = edge_vertex.find(key);
    if (it != edge_vertex.end()) return it->second;
    const double fa = values[a];
    const double fb = values[b];
    const double t = fa / (fa - fb);
    Vec3 p;
    if (t <= 0.0) {
      p = position(x0, y0, z0);
    } else if (t >= 1.0) {
      p = position(x1, y1, z1);
    } else {
      p = position(x0, y0, z0) + t * (position(x1, y1, z1) - position(x0, y0, z0));
    }
    const int id = static_cast<int>(verts.size());
    verts.push_back(p);
    edge_vertex.emplace(key, id);
    return id;
  };

  for (long z = 0; z < n; ++z) {
    for (long y = 0; y < n; ++y) {
      for (long x = 0; x < n; ++x) {
        int cube = 0;
        for (int c = 0; c < 8; ++c)
          if (values[index(x + kCorner[c][0], y + kCorner[c][1], z + kCorner[c][2])] < 0.0) cube |= 1 << c;
        if (detail::kEdgeTable[cube] == 0) continue;
        std::array<int, 12> ev{};
        for (int e = 0; e < 12; ++e) {
          if (!(detail::kEdgeTable[cube] & (1 << e))) continue;
          const int* c0 = kCorner[kEdge[e][0]];
          const int* c1 = kCorner[kEdge[e][1]];
          ev[static_cast<std::size_t>(e)] =
              vertex_on(x + c0[0], y + c0[1], z + c0[2], x + c1[0], y + c1[1], z + c1[2]);
        }
        const int* row = detail::kTriTable[cube];
        for (int k = 0; row[k] != -1; k += 3) {
          // Table winding faces the inside; swap to face the positive side.
          tris.push_back({ev[static_cast<std::size_t>(row[k])], ev[static_cast<std::size_t>(row[k + 2])],
                          ev[static_cast<std::size_t>(row[k + 1])]});
        }
      }
    }
  }

  TriangleMesh out;
  out.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) out.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  out.triangles.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t t = 0; t < tris.size(); ++t)
    for (int k = 0; k < 3; ++k) out.triangles(static_cast<Eigen::Index>(t), k) = tris[t][static_cast<std::size_t>(k)];
  return cleanup(out);
}

TriangleMesh extract_mesh(const field::SdfModel& field, int resolution, const Bounds& bounds) {
  require(resolution >= 8, "extract_mesh: grid resolution must be >= 8");
  const long m = resolution + 1;
  const Vec3 step = (bounds.hi - bounds.lo) / resolution;
  VecX values(m * m * m);
  const long chunk = 1L << 15;
  MatX pts;
  for (long begin = 0; begin < values.size(); begin += chunk) {
    const long count = std::min(chunk, static_cast<long>(values.size()) - begin);
    pts.resize(count, 3);
    for (long i = 0; i < count; ++i) {
      const long id = begin + i;
      const long x = id % m;
      const long y = (id / m) % m;
      const long z = id / (m * m);
      pts.row(i) << bounds.lo.x() + step.x() * static_cast<double>(x), bounds.lo.y() + step.y() * static_cast<double>(y),
          bounds.lo.z() + step.z() * static_cast<double>(z);
    }
    values.segment(begin, count) = field.values(pts);
  }
  TriangleMesh mesh = marching_cubes(values, resolution, bounds);
  if (mesh.empty()) spdlog::warn("extract_mesh: the zero level set is empty inside the bounds");
  return mesh;
}

}  // namespace nsdf::mesh
