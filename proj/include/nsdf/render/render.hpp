#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "nsdf/ad/tape.hpp"
#include "nsdf/field/radiance_field.hpp"
#include "nsdf/field/sdf_field.hpp"
#include "nsdf/render/camera.hpp"
#include "nsdf/render/image.hpp"

namespace nsdf::render {

struct RayBundle {
  MatX origins;     // N x 3
  MatX directions;  // N x 3, unit
  Eigen::Matrix<int, Eigen::Dynamic, 2> pixels;
  VecX near;
  VecX far;
  std::vector<std::uint8_t> hit;  // 1 if the ray meets the bounding sphere

  [[nodiscard]] Eigen::Index size() const { return origins.rows(); }
  [[nodiscard]] RayBundle slice(Eigen::Index start, Eigen::Index count) const;
};

/// Rays through the centers of the given (x, y) pixels, bounded by a sphere of `bound_radius`.
RayBundle generate_rays(const Camera& camera, const std::vector<std::pair<int, int>>& pixels,
                        double bound_radius = 1.0);
/// Every pixel, row-major.
RayBundle generate_all_rays(const Camera& camera, double bound_radius = 1.0);
/// Recomputes near/far/hit against a centered sphere.
void bound_rays(RayBundle& rays, double radius);

struct SamplingSpec {
  int n_coarse = 64;
  int n_fine = 64;             // importance samples from one resampling round
  double upsample_s = 64.0;    // sharpness used when resampling
  double bound_radius = 1.0;
  Vec3 background = Vec3::Ones();  // color channel only; normals always use zero
};

/// Sections per ray after resampling (boundaries are near, all samples, far).
inline int sections_per_ray(const SamplingSpec& s) { return s.n_coarse + s.n_fine + 1; }

/// Learnable sharpness s = exp(10 u).
struct SScale {
  double u = 0.3;
  [[nodiscard]] double value() const;
};

/// Section weights along one ray from SDF values at increasing sample depths.
/// Returns n-1 weights W_i = alpha_i prod_{j<i} (1 - alpha_j) with
/// alpha_i = max((Phi_s(f_i) - Phi_s(f_{i+1})) / Phi_s(f_i), 0). deltas (n-1) must be > 0.
VecX neus_weights(const VecX& sdf_values, const VecX& deltas, double s);

/// Section boundaries per ray (N x (sections+1)): near, coarse and resampled depths, far. No gradients.
MatX sample_depths(const field::SdfModel& sdf, const RayBundle& rays, const SamplingSpec& spec,
                   std::mt19937_64* jitter);

/// Differentiable render nodes. Samples are ordered ray-major.
struct RenderNodes {
  ad::Var color;    // N x 3 (only when a radiance model is given)
  ad::Var normal;   // N x 3
  ad::Var opacity;  // N x 1
  ad::Var weights;  // (N*S) x 1
  ad::Var sample_sdf;
  ad::Var sample_gradient;  // (N*S) x 3
  MatX sample_points;
};

/// Records rendering on `tape`. `s` is a 1x1 node. Gradients flow into `sdf_grad` / `rad_grad`.
RenderNodes render_rays(ad::Tape& tape, const field::SdfModel& sdf, const field::RadianceModel* radiance,
                        const RayBundle& rays, const MatX& depths, const SamplingSpec& spec, ad::Var s,
                        VecX* sdf_grad, VecX* rad_grad);

struct RenderOutput {
  MatX color;    // N x 3 (zero columns without a radiance model)
  MatX normal;   // N x 3
  VecX opacity;  // N
  MatX weights;  // N x S
};

/// Forward-only render, chunked over `threads` workers.
RenderOutput render(const field::SdfModel& sdf, const field::RadianceModel* radiance, const RayBundle& rays,
                    const SamplingSpec& spec, double s, int threads = 1, std::size_t chunk = 2048);

MatX render_color(const field::SdfModel& sdf, const field::RadianceModel& radiance, const RayBundle& rays,
                  const SamplingSpec& spec, double s);
MatX render_normal_map(const field::SdfModel& sdf, const RayBundle& rays, const SamplingSpec& spec, double s);
VecX render_opacity(const field::SdfModel& sdf, const RayBundle& rays, const SamplingSpec& spec, double s);

/// n -> R n per row. R must be a proper rotation.
MatX rotate_normals(const MatX& normals, const Mat3& rotation);
/// (n + 1) / 2 clamped to [0, 1].
MatX normals_to_rgb(const MatX& normals);
/// 2 rgb - 1.
MatX rgb_to_normals(const MatX& rgb);
/// Uniformly random rotation.
Mat3 random_rotation(std::mt19937_64& rng);

}  // namespace nsdf::render
