#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nsdf/mesh/bvh.hpp"
#include "nsdf/mesh/mesh.hpp"
#include "nsdf/render/camera.hpp"
#include "nsdf/render/image.hpp"

namespace nsdf::mesh {

/// Component with the most triangles (ties: larger area, then lower first vertex index).
TriangleMesh largest_component(const TriangleMesh& mesh);
/// Component id per triangle (triangles sharing a vertex are connected), ids in order of first appearance.
std::vector<int> triangle_components(const TriangleMesh& mesh);

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 0.0;
};

/// Exact minimal enclosing sphere (Welzl, move-to-front).
Sphere minimal_enclosing_sphere(const std::vector<Vec3>& points);

struct Similarity {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;  // p -> scale * (p - center)
};

struct NormalizedPair {
  TriangleMesh reference;
  TriangleMesh reconstructed;
  Similarity transform;
};

/// Maps the reference's minimal enclosing sphere onto the unit sphere and applies the same map to both.
NormalizedPair normalize_pair(const TriangleMesh& reference, const TriangleMesh& reconstructed);

struct SurfaceSamples {
  Points points;
  std::vector<int> source_triangle;
  double spacing = 0.0;
  [[nodiscard]] Eigen::Index size() const { return points.rows(); }
};

/// Uniform surface samples with no two closer than `spacing`.
/// Each triangle is assigned the closest of 13 projection axes; candidates are the points of that axis's
/// randomly placed hexagonal lattice (pitch `spacing`) lifted onto the triangle. Axis groups are visited
/// in a fixed order and a candidate is kept when no accepted sample lies within `spacing`.
SurfaceSamples resample_surface(const TriangleMesh& mesh, double spacing = 0.003, std::uint64_t seed = 0);

/// Count the spacing formula predicts for a given area.
double expected_sample_count(double area, double spacing);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

/// Fraction of samples whose distance to `target` is below `threshold`. Empty samples give 0.
double fraction_within(const SurfaceSamples& samples, const Bvh& target, double threshold);
/// Distances from each sample to the target mesh.
VecX distances_to(const SurfaceSamples& samples, const Bvh& target);

PrecisionRecall precision_recall(const SurfaceSamples& recon, const Bvh& recon_mesh, const SurfaceSamples& ref,
                                 const Bvh& ref_mesh, double threshold = 0.02);
double f_score(double precision, double recall);

/// Recall over reference samples whose source triangle is flagged visible; empty when there are none.
std::optional<double> recall_visible(const Bvh& recon_mesh, const SurfaceSamples& ref,
                                     const std::vector<std::uint8_t>& flags, double threshold = 0.02);

/// Per-triangle visibility from a camera: front-facing, projects into the image, unoccluded.
bool triangle_visible_from(const Bvh& bvh, Eigen::Index triangle, const render::Camera& camera);
/// Flag = visible from at least `min_views` cameras.
std::vector<std::uint8_t> mark_visible(const TriangleMesh& reference, const std::vector<render::Camera>& views,
                                       int min_views = 3);

/// Per pixel: index of the first triangle hit, -1 for background.
std::vector<int> triangle_id_buffer(const Bvh& bvh, const render::Camera& camera);

struct ViewSelection {
  std::vector<std::size_t> kept;
  std::vector<std::size_t> discarded;
  std::vector<double> visible_fraction;  // per input view; NaN when the view sees no object pixel
};

/// Keeps views where at most `max_fraction` of object pixels belong to visible-flagged triangles.
ViewSelection select_unobserved_eval_views(const std::vector<render::Camera>& views, const TriangleMesh& reference,
                                           double max_fraction = 1.0 / 3.0);

/// Lambert shading under a light placed behind the camera, white background.
render::Image render_eval_view(const Bvh& bvh, const render::Camera& camera, const Vec3& color = {0.85, 0.45, 0.30});

/// `count` points on the unit sphere, evenly spread (golden-angle spiral).
std::vector<Vec3> fibonacci_sphere(int count);
/// Orthographic cameras on a sphere of `distance`, looking at the origin, image plane `extent` wide.
std::vector<render::Camera> fibonacci_views(int count, double distance, double extent, int resolution);

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  std::optional<double> visible_recall;
  double threshold = 0.02;
  double spacing = 0.003;
  long recon_samples = 0;
  long reference_samples = 0;
  long visible_reference_samples = 0;
  long visible_triangles = 0;
  long reference_triangles = 0;
  long recon_triangles = 0;

  [[nodiscard]] std::string to_json() const;
};

struct EvalOptions {
  double threshold = 0.02;
  double spacing = 0.003;
  std::uint64_t seed = 0;
  bool keep_largest_component = true;
};

/// Full geometric protocol: largest component, joint normalization, resampling, metrics.
/// Reference visibility flags, when present, drive visible_recall.
MetricsReport evaluate_geometry(const TriangleMesh& reference, const TriangleMesh& reconstructed,
                                const EvalOptions& options = {});

}  // namespace nsdf::mesh
