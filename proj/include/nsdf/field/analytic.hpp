#pragma once

#include <functional>
#include <string>

#include "nsdf/field/sdf_field.hpp"

namespace nsdf::field {

/// Closed-form SDF. forward() yields constant nodes (no parameters) and a zero feature block.
class AnalyticSdf final : public SdfModel {
 public:
  using Eval = std::function<double(const Vec3&, Vec3*)>;

  AnalyticSdf(std::string name, Eval eval, Eigen::Index feature_dim = 0);

  SdfOutput forward(ad::Tape& tape, const MatX& points, VecX* param_grad) const override;
  [[nodiscard]] VecX values(const MatX& points) const override;
  [[nodiscard]] Eigen::Index feature_dim() const override { return feature_dim_; }

  double operator()(const Vec3& p, Vec3* grad = nullptr) const { return eval_(p, grad); }
  [[nodiscard]] const std::string& name() const { return name_; }
  /// Copy with a different zero-feature width (to pair with a radiance model).
  [[nodiscard]] AnalyticSdf with_feature_dim(Eigen::Index dim) const;

 private:
  std::string name_;
  Eval eval_;
  Eigen::Index feature_dim_;
};

AnalyticSdf sphere_sdf(double radius, const Vec3& center = Vec3::Zero());
AnalyticSdf box_sdf(const Vec3& half_extent, const Vec3& center = Vec3::Zero());
/// Ring in the xy plane.
AnalyticSdf torus_sdf(double major_radius, double minor_radius, const Vec3& center = Vec3::Zero());
/// f(p) = p . n - offset with n normalized.
AnalyticSdf plane_sdf(const Vec3& normal, double offset);
AnalyticSdf union_sdf(const AnalyticSdf& a, const AnalyticSdf& b);
/// f'(p) = k f(p); breaks the unit-gradient property when k != 1.
AnalyticSdf scaled_sdf(const AnalyticSdf& a, double k);

/// Parses "sphere:r", "box:hx,hy,hz", "torus:R,r", "union:<a>|<b>".
AnalyticSdf parse_shape(const std::string& spec);

}  // namespace nsdf::field
