#pragma once

#include "nsdf/field/sdf_field.hpp"
#include "nsdf/mesh/mesh.hpp"

namespace nsdf::mesh {

struct Bounds {
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);
};

/// Zero level set of a sampled scalar grid. `values` has (n+1)^3 entries indexed x + (n+1)(y + (n+1) z).
/// Triangles face the positive side. Returns a cleaned mesh.
TriangleMesh marching_cubes(const VecX& values, int n, const Bounds& bounds);

/// Samples the field on a regular grid of `resolution` cells per axis and extracts {f = 0}.
TriangleMesh extract_mesh(const field::SdfModel& field, int resolution, const Bounds& bounds = {});

}  // namespace nsdf::mesh
