#pragma once

#include <cstdint>
#include <vector>

#include "nsdf/ad/tape.hpp"

namespace nsdf::field {

/// Maps (position, view direction, surface normal, geometry feature) to RGB.
class RadianceModel {
 public:
  virtual ~RadianceModel() = default;
  /// points, dirs: N x 3 (constants). normals: N x 3, features: N x F (may carry gradients).
  virtual ad::Var forward(ad::Tape& tape, const MatX& points, const MatX& dirs, ad::Var normals,
                          ad::Var features, VecX* param_grad) const = 0;
};

struct RadianceFieldSpec {
  std::vector<int> hidden = {64, 64, 64};
  int feature_dim = 16;  // must match the SDF feature width
  int dir_encoding_levels = 4;

  static RadianceFieldSpec full();
};

/// ReLU MLP with a sigmoid head, so outputs stay in [0, 1]^3.
class RadianceField final : public RadianceModel {
 public:
  explicit RadianceField(RadianceFieldSpec spec);

  ad::Var forward(ad::Tape& tape, const MatX& points, const MatX& dirs, ad::Var normals, ad::Var features,
                  VecX* param_grad) const override;

  /// Uniform(-1/sqrt(in), 1/sqrt(in)) weights and biases.
  void init_default(std::uint64_t seed);

  [[nodiscard]] const RadianceFieldSpec& spec() const { return spec_; }
  [[nodiscard]] const VecX& params() const { return params_; }
  [[nodiscard]] VecX& params() { return params_; }
  [[nodiscard]] Eigen::Index input_width() const;
  [[nodiscard]] std::vector<int> layer_dims() const;

 private:
  struct Layer {
    ad::ParamBlock weight;
    ad::ParamBlock bias;
  };
  RadianceFieldSpec spec_;
  std::vector<Layer> layers_;
  VecX params_;
};

/// Same color everywhere.
class ConstantRadiance final : public RadianceModel {
 public:
  explicit ConstantRadiance(Vec3 rgb) : rgb_(std::move(rgb)) {}
  ad::Var forward(ad::Tape& tape, const MatX& points, const MatX& dirs, ad::Var normals, ad::Var features,
                  VecX* param_grad) const override;

 private:
  Vec3 rgb_;
};

/// Direction-independent color that varies with position: clamp(0.5 + 0.5 p, 0, 1).
class PositionRadiance final : public RadianceModel {
 public:
  ad::Var forward(ad::Tape& tape, const MatX& points, const MatX& dirs, ad::Var normals, ad::Var features,
                  VecX* param_grad) const override;
};

/// Lambert-like shading of a base albedo under a fixed key light, driven by the unit normal.
/// Used to synthesize test scenes; treated as a constant (no gradient into the normals).
class ShadedRadiance final : public RadianceModel {
 public:
  ShadedRadiance(Vec3 albedo, Vec3 light_dir);
  ad::Var forward(ad::Tape& tape, const MatX& points, const MatX& dirs, ad::Var normals, ad::Var features,
                  VecX* param_grad) const override;

 private:
  Vec3 albedo_;
  Vec3 light_;
};

}  // namespace nsdf::field
