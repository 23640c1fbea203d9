#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "nsdf/ad/tape.hpp"

namespace nsdf::field {

/// Per-point SDF outputs as tape nodes.
struct SdfOutput {
  ad::Var sdf;       // N x 1
  ad::Var gradient;  // N x 3, d sdf / d p, itself differentiable w.r.t. parameters
  ad::Var feature;   // N x F
};

/// Anything that maps points to signed distances with spatial gradients.
class SdfModel {
 public:
  virtual ~SdfModel() = default;
  /// Records the forward pass. Parameter gradients (if any) accumulate into `param_grad` on backward.
  virtual SdfOutput forward(ad::Tape& tape, const MatX& points, VecX* param_grad) const = 0;
  /// Values only, no tape.
  [[nodiscard]] virtual VecX values(const MatX& points) const;
  [[nodiscard]] virtual Eigen::Index feature_dim() const = 0;
};

struct SdfFieldSpec {
  std::vector<int> hidden = {64, 64, 64, 64};
  int feature_dim = 16;
  int encoding_levels = 6;
  std::vector<int> skip_layers;  // linear-layer indices whose input is concatenated with the encoding
  double softplus_beta = 100.0;

  /// Full-size preset: 8 x 256 with the encoding re-injected at layer 4.
  static SdfFieldSpec full();
};

/// Neural SDF: encoded point -> softplus MLP -> [sdf, feature].
class SdfField final : public SdfModel {
 public:
  explicit SdfField(SdfFieldSpec spec);

  SdfOutput forward(ad::Tape& tape, const MatX& points, VecX* param_grad) const override;
  [[nodiscard]] VecX values(const MatX& points) const override;
  [[nodiscard]] Eigen::Index feature_dim() const override { return spec_.feature_dim; }

  /// Sphere-like initialization: f(p) ~ |p| - radius. The SDF output row is then least-squares refit.
  void init_geometric(double radius, std::uint64_t seed);

  [[nodiscard]] const SdfFieldSpec& spec() const { return spec_; }
  [[nodiscard]] const VecX& params() const { return params_; }
  [[nodiscard]] VecX& params() { return params_; }
  [[nodiscard]] Eigen::Index input_width() const;
  /// Widths of every linear layer's input followed by the final output width.
  [[nodiscard]] std::vector<int> layer_dims() const;

 private:
  struct Layer {
    ad::ParamBlock weight;  // out x in
    ad::ParamBlock bias;    // 1 x out
  };
  void build_layout();
  [[nodiscard]] MatX last_hidden(const MatX& points) const;
  void refit_sdf_head(double radius, std::mt19937_64& rng);

  SdfFieldSpec spec_;
  std::vector<Layer> layers_;
  VecX params_;
};

/// Evaluates value and feature at one point.
std::pair<double, VecX> sdf_eval(const SdfModel& field, const Vec3& p);
/// Exact spatial gradient at one point.
Vec3 sdf_spatial_gradient(const SdfModel& field, const Vec3& p);
/// Sets the field's parameters for f ~ |p| - radius. Rejects radius <= 0.
SdfField init_geometric(SdfField field, double radius, std::uint64_t seed = 0);

}  // namespace nsdf::field
