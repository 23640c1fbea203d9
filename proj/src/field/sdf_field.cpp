#include "nsdf/field/sdf_field.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Cholesky>

#include "nsdf/field/encoding.hpp"

namespace nsdf::field {

VecX SdfModel::values(const MatX& points) const {
  ad::Tape tape(false);
  return forward(tape, points, nullptr).sdf.value().col(0);
}

SdfFieldSpec SdfFieldSpec::full() {
  SdfFieldSpec s;
  s.hidden.assign(8, 256);
  s.feature_dim = 256;
  s.skip_layers = {4};
  return s;
}

SdfField::SdfField(SdfFieldSpec spec) : spec_(std::move(spec)) {
  require(!spec_.hidden.empty(), "SdfField: at least one hidden layer");
  require(spec_.feature_dim >= 0, "SdfField: feature_dim must be >= 0");
  require(spec_.encoding_levels >= 0, "SdfField: encoding_levels must be >= 0");
  for (int w : spec_.hidden) require(w > 0, "SdfField: hidden widths must be positive");
  for (int l : spec_.skip_layers) {
    require(l > 0 && l <= static_cast<int>(spec_.hidden.size()), "SdfField: skip layer out of range");
    require(spec_.hidden[static_cast<std::size_t>(l - 1)] > input_width(),
            "SdfField: layer before a skip must be wider than the encoding");
  }
  build_layout();
}

Eigen::Index SdfField::input_width() const { return encoded_width(3, spec_.encoding_levels); }

std::vector<int> SdfField::layer_dims() const {
  std::vector<int> dims;
  dims.push_back(static_cast<int>(input_width()));
  for (int w : spec_.hidden) dims.push_back(w);
  dims.push_back(1 + spec_.feature_dim);
  return dims;
}

void SdfField::build_layout() {
  const std::vector<int> dims = layer_dims();
  const int d0 = dims.front();
  const auto is_skip = [this](int l) {
    return std::find(spec_.skip_layers.begin(), spec_.skip_layers.end(), l) != spec_.skip_layers.end();
  };
  layers_.clear();
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const int in = dims[l];
    const int out = dims[l + 1] - (is_skip(static_cast<int>(l) + 1) ? d0 : 0);
    Layer layer;
    layer.weight = {offset, out, in};
    offset += layer.weight.size();
    layer.bias = {offset, 1, out};
    offset += layer.bias.size();
    layers_.push_back(layer);
  }
  params_ = VecX::Zero(offset);
}

SdfOutput SdfField::forward(ad::Tape& tape, const MatX& points, VecX* param_grad) const {
  require(points.cols() == 3, "SdfField::forward: points must be N x 3");
  const double beta = spec_.softplus_beta;
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;

  const ad::Var enc = tape.constant(positional_encode(points, spec_.encoding_levels));
  const ad::Var enc_t = tape.constant(positional_encode_tangents(points, spec_.encoding_levels));
  ad::Var h = enc;
  ad::Var t = enc_t;  // stacked tangents: 3N x width

  const std::size_t last = layers_.size() - 1;
  ad::Var z;
  ad::Var grad_col;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (std::find(spec_.skip_layers.begin(), spec_.skip_layers.end(), static_cast<int>(l)) !=
        spec_.skip_layers.end()) {
      h = ad::scale(ad::concat_cols({h, enc}), inv_sqrt2);
      t = ad::scale(ad::concat_cols({t, enc_t}), inv_sqrt2);
    }
    const ad::Var w = tape.param(params_, param_grad, layers_[l].weight);
    const ad::Var b = tape.param(params_, param_grad, layers_[l].bias);
    z = ad::add_row(ad::matmul_wt(h, w), b);
    if (l < last) {
      const ad::Var tz = ad::matmul_wt(t, w);
      h = ad::softplus(z, beta);
      t = ad::mul_tiled(ad::softplus_slope(z, beta), tz);
    } else {
      grad_col = ad::matmul_wt(t, ad::slice_rows(w, 0, 1));
    }
  }
  SdfOutput out;
  out.sdf = ad::slice_cols(z, 0, 1);
  out.feature = ad::slice_cols(z, 1, spec_.feature_dim);
  out.gradient = ad::blocks_to_cols(grad_col, 3);
  return out;
}

VecX SdfField::values(const MatX& points) const {
  require(points.cols() == 3, "SdfField::values: points must be N x 3");
  const double beta = spec_.softplus_beta;
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const MatX enc = positional_encode(points, spec_.encoding_levels);
  MatX h = enc;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (std::find(spec_.skip_layers.begin(), spec_.skip_layers.end(), static_cast<int>(l)) !=
        spec_.skip_layers.end()) {
      MatX cat(h.rows(), h.cols() + enc.cols());
      cat << h, enc;
      h = cat * inv_sqrt2;
    }
    const auto& L = layers_[l];
    const Eigen::Map<const MatX> w(params_.data() + L.weight.offset, L.weight.rows, L.weight.cols);
    const Eigen::Map<const MatX> b(params_.data() + L.bias.offset, 1, L.bias.cols);
    if (l + 1 < layers_.size()) {
      MatX z = (h * w.transpose()).rowwise() + b.row(0);
      h = z.unaryExpr([beta](double v) {
        const double bz = beta * v;
        return (std::max(bz, 0.0) + std::log1p(std::exp(-std::abs(bz)))) / beta;
      });
    } else {
      // Only the SDF row of the last layer is needed.
      VecX out = h * w.row(0).transpose();
      out.array() += b(0, 0);
      return out;
    }
  }
  return {};
}

void SdfField::init_geometric(double radius, std::uint64_t seed) {
  require(radius > 0.0, "init_geometric: radius must be > 0");
  std::mt19937_64 rng(seed);
  const std::vector<int> dims = layer_dims();
  const Eigen::Index d0 = input_width();
  const bool encoded = spec_.encoding_levels > 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    Eigen::Map<MatX> w(params_.data() + L.weight.offset, L.weight.rows, L.weight.cols);
    Eigen::Map<MatX> b(params_.data() + L.bias.offset, 1, L.bias.cols);
    const auto out = static_cast<double>(L.weight.rows);
    if (l + 1 == layers_.size()) {
      std::normal_distribution<double> nd(std::sqrt(std::numbers::pi) / std::sqrt(double(dims[l])), 1e-4);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
      b.setConstant(-radius);
      continue;
    }
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0) / std::sqrt(out));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = nd(rng);
    b.setZero();
    const bool skip = std::find(spec_.skip_layers.begin(), spec_.skip_layers.end(), static_cast<int>(l)) !=
                      spec_.skip_layers.end();
    if (encoded && l == 0) {
      w.rightCols(w.cols() - 3).setZero();
    } else if (encoded && skip) {
      w.rightCols(d0 - 3).setZero();
    }
  }
  refit_sdf_head(radius, rng);
}

MatX SdfField::last_hidden(const MatX& points) const {
  const double beta = spec_.softplus_beta;
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const MatX enc = positional_encode(points, spec_.encoding_levels);
  MatX h = enc;
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    if (std::find(spec_.skip_layers.begin(), spec_.skip_layers.end(), static_cast<int>(l)) !=
        spec_.skip_layers.end()) {
      MatX cat(h.rows(), h.cols() + enc.cols());
      cat << h, enc;
      h = cat * inv_sqrt2;
    }
    const auto& L = layers_[l];
    const Eigen::Map<const MatX> w(params_.data() + L.weight.offset, L.weight.rows, L.weight.cols);
    const Eigen::Map<const MatX> b(params_.data() + L.bias.offset, 1, L.bias.cols);
    MatX z = (h * w.transpose()).rowwise() + b.row(0);
    h = z.unaryExpr([beta](double v) {
      const double bz = beta * v;
      return (std::max(bz, 0.0) + std::log1p(std::exp(-std::abs(bz)))) / beta;
    });
  }
  if (std::find(spec_.skip_layers.begin(), spec_.skip_layers.end(), static_cast<int>(layers_.size() - 1)) !=
      spec_.skip_layers.end()) {
    MatX cat(h.rows(), h.cols() + enc.cols());
    cat << h, enc;
    h = cat * inv_sqrt2;
  }
  return h;
}

// Small random networks only match |p| - r loosely; a ridge fit of the SDF output row on
// points spread over [-1.5, 1.5]^3 tightens the match without touching the hidden layers.
void SdfField::refit_sdf_head(double radius, std::mt19937_64& rng) {
  const int n = 4096;
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  MatX pts(n, 3);
  for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = u(rng);
  const MatX h = last_hidden(pts);
  MatX a(n, h.cols() + 1);
  a << h, MatX::Ones(n, 1);
  const VecX target = pts.rowwise().norm().array() - radius;
  MatX ata = a.transpose() * a;
  ata.diagonal().array() += 1e-6 * n;
  const VecX sol = ata.ldlt().solve(a.transpose() * target);
  const auto& L = layers_.back();
  for (Eigen::Index j = 0; j < h.cols(); ++j) params_[L.weight.offset + j * L.weight.rows] = sol[j];
  params_[L.bias.offset] = sol[h.cols()];
}

std::pair<double, VecX> sdf_eval(const SdfModel& field, const Vec3& p) {
  ad::Tape tape(false);
  MatX pts(1, 3);
  pts.row(0) = p.transpose();
  const SdfOutput out = field.forward(tape, pts, nullptr);
  return {out.sdf.value()(0, 0), out.feature.value().row(0).transpose()};
}

Vec3 sdf_spatial_gradient(const SdfModel& field, const Vec3& p) {
  ad::Tape tape(false);
  MatX pts(1, 3);
  pts.row(0) = p.transpose();
  const SdfOutput out = field.forward(tape, pts, nullptr);
  return out.gradient.value().row(0).transpose();
}

SdfField init_geometric(SdfField field, double radius, std::uint64_t seed) {
  field.init_geometric(radius, seed);
  return field;
}

}  // namespace nsdf::field
