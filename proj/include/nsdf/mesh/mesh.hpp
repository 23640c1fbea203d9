#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "nsdf/common.hpp"

namespace nsdf::mesh {

using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

struct TriangleMesh {
  Points vertices;
  Faces triangles;
  std::vector<std::uint8_t> visible;  // per triangle, empty when not computed

  [[nodiscard]] Eigen::Index vertex_count() const { return vertices.rows(); }
  [[nodiscard]] Eigen::Index triangle_count() const { return triangles.rows(); }
  [[nodiscard]] bool empty() const { return triangles.rows() == 0; }
  [[nodiscard]] Vec3 vertex(Eigen::Index i) const { return vertices.row(i).transpose(); }
  [[nodiscard]] Vec3 corner(Eigen::Index t, int k) const { return vertex(triangles(t, k)); }
  [[nodiscard]] Vec3 center(Eigen::Index t) const;
  /// Unnormalized (corner1 - corner0) x (corner2 - corner0).
  [[nodiscard]] Vec3 cross(Eigen::Index t) const;
  [[nodiscard]] Vec3 unit_normal(Eigen::Index t) const;
  [[nodiscard]] double triangle_area(Eigen::Index t) const;
  [[nodiscard]] double area() const;
  /// Signed enclosed volume (positive for closed outward-oriented meshes).
  [[nodiscard]] double signed_volume() const;
  /// Throws ValidationError on out-of-range indices or a flag vector of the wrong length.
  void validate() const;
};

/// Merges bit-identical vertices, then drops triangles with repeated corners or area <= 1e-12
/// and vertices no triangle uses. Flags follow their triangles.
TriangleMesh cleanup(const TriangleMesh& mesh);

/// Applies p -> scale * (p - center).
TriangleMesh transformed(const TriangleMesh& mesh, const Vec3& center, double scale);
/// Applies p -> R p + t.
TriangleMesh rigid_transformed(const TriangleMesh& mesh, const Mat3& rotation, const Vec3& translation);

/// Number of edges not shared by exactly two triangles (0 for a closed 2-manifold).
std::size_t boundary_or_nonmanifold_edges(const TriangleMesh& mesh);

/// OBJ text (v / f records; f indices may use the v/vt/vn form, negative indices allowed).
void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh read_obj(const std::filesystem::path& path);
/// Binary little-endian PLY with double vertices and int index lists.
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh read_ply(const std::filesystem::path& path);
/// Dispatches on the extension (.obj / .ply).
void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh);
TriangleMesh read_mesh(const std::filesystem::path& path);

}  // namespace nsdf::mesh
