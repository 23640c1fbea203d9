#include "nsdf/field/radiance_field.hpp"

#include <cmath>
#include <random>

#include "nsdf/field/encoding.hpp"

namespace nsdf::field {

RadianceFieldSpec RadianceFieldSpec::full() {
  RadianceFieldSpec s;
  s.hidden.assign(4, 256);
  s.feature_dim = 256;
  return s;
}

RadianceField::RadianceField(RadianceFieldSpec spec) : spec_(std::move(spec)) {
  require(!spec_.hidden.empty(), "RadianceField: at least one hidden layer");
  require(spec_.feature_dim >= 0 && spec_.dir_encoding_levels >= 0, "RadianceField: bad spec");
  const std::vector<int> dims = layer_dims();
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.weight = {offset, dims[l + 1], dims[l]};
    offset += layer.weight.size();
    layer.bias = {offset, 1, dims[l + 1]};
    offset += layer.bias.size();
    layers_.push_back(layer);
  }
  params_ = VecX::Zero(offset);
}

Eigen::Index RadianceField::input_width() const {
  return 3 + encoded_width(3, spec_.dir_encoding_levels) + 3 + spec_.feature_dim;
}

std::vector<int> RadianceField::layer_dims() const {
  std::vector<int> dims;
  dims.push_back(static_cast<int>(input_width()));
  for (int w : spec_.hidden) dims.push_back(w);
  dims.push_back(3);
  return dims;
}

void RadianceField::init_default(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const Layer& L : layers_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(L.weight.cols));
    std::uniform_real_distribution<double> ud(-bound, bound);
    for (Eigen::Index i = 0; i < L.weight.size(); ++i) params_[L.weight.offset + i] = ud(rng);
    for (Eigen::Index i = 0; i < L.bias.size(); ++i) params_[L.bias.offset + i] = ud(rng);
  }
}

ad::Var RadianceField::forward(ad::Tape& tape, const MatX& points, const MatX& dirs, ad::Var normals,
                               ad::Var features, VecX* param_grad) const {
  require(points.cols() == 3 && dirs.cols() == 3, "RadianceField: points/dirs must be N x 3");
  require(features.cols() == spec_.feature_dim, "RadianceField: feature width mismatch");
  ad::Var h = ad::concat_cols({tape.constant(points), tape.constant(positional_encode(dirs, spec_.dir_encoding_levels)),
                               normals, features});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const ad::Var w = tape.param(params_, param_grad, layers_[l].weight);
    const ad::Var b = tape.param(params_, param_grad, layers_[l].bias);
    h = ad::add_row(ad::matmul_wt(h, w), b);
    h = l + 1 < layers_.size() ? ad::relu(h) : ad::sigmoid(h);
  }
  return h;
}

ad::Var ConstantRadiance::forward(ad::Tape& tape, const MatX& points, const MatX&, ad::Var, ad::Var,
                                  VecX*) const {
  MatX c(points.rows(), 3);
  c.rowwise() = rgb_.transpose();
  return tape.constant(std::move(c));
}

ad::Var PositionRadiance::forward(ad::Tape& tape, const MatX& points, const MatX&, ad::Var, ad::Var,
                                  VecX*) const {
  MatX c = (0.5 + 0.5 * points.array()).cwiseMax(0.0).cwiseMin(1.0).matrix();
  return tape.constant(std::move(c));
}

ShadedRadiance::ShadedRadiance(Vec3 albedo, Vec3 light_dir) : albedo_(std::move(albedo)), light_(light_dir.normalized()) {}

ad::Var ShadedRadiance::forward(ad::Tape& tape, const MatX& points, const MatX&, ad::Var normals, ad::Var,
                                VecX*) const {
  const MatX& n = normals.value();
  MatX c(points.rows(), 3);
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    const double len = n.row(i).norm();
    const double lambert = len > 0.0 ? std::max(n.row(i).dot(light_.transpose()) / len, 0.0) : 0.0;
    c.row(i) = (albedo_ * (0.25 + 0.75 * lambert)).transpose();
  }
  return tape.constant(std::move(c));
}

}  // namespace nsdf::field
