#include "nsdf/losses/losses.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

namespace nsdf::losses {

void LossWeights::validate() const {
  for (double w : {beta, lambda, gamma, gamma_n}) {
    require(std::isfinite(w) && w >= 0.0, "loss weights must be finite and nonnegative");
  }
}

ad::Var photometric_loss(ad::Var rendered, const MatX& observed) {
  require(rendered.rows() >= 1, "photometric_loss: no rays");
  require(rendered.rows() == observed.rows() && rendered.cols() == observed.cols(),
          "photometric_loss: shape mismatch");
  const ad::Var diff = ad::sub(rendered, rendered.tape->constant(observed));
  return ad::scale(ad::sum(ad::abs(diff)), 1.0 / static_cast<double>(observed.rows()));
}

ad::Var mask_loss(ad::Var opacity, const MatX& mask, double eps) {
  require(opacity.rows() >= 1, "mask_loss: no rays");
  return ad::bce_mean(opacity, mask, eps);
}

ad::Var eikonal_from_gradients(ad::Var gradients) {
  require(gradients.rows() >= 1 && gradients.cols() == 3, "eikonal: need >= 1 gradient row of width 3");
  return ad::mean(ad::square(ad::add_scalar(ad::row_norm(gradients), -1.0)));
}

ad::Var eikonal_loss(ad::Tape& tape, const field::SdfModel& sdf, const MatX& points, VecX* param_grad) {
  return eikonal_from_gradients(sdf.forward(tape, points, param_grad).gradient);
}

double photometric_loss(const MatX& rendered, const MatX& observed) {
  ad::Tape tape(false);
  return photometric_loss(tape.constant(rendered), observed).value()(0, 0);
}

double mask_loss(const VecX& opacity, const VecX& mask, double eps) {
  ad::Tape tape(false);
  return mask_loss(tape.constant(opacity), mask, eps).value()(0, 0);
}

double eikonal_loss(const field::SdfModel& sdf, const MatX& points) {
  ad::Tape tape(false);
  return eikonal_loss(tape, sdf, points, nullptr).value()(0, 0);
}

namespace {

double scalar_of(const ad::Var& v, const char* name) {
  if (!v.valid()) return 0.0;
  require(v.rows() == 1 && v.cols() == 1, std::string("total_loss: ") + name + " must be a scalar node");
  const double x = v.value()(0, 0);
  if (!std::isfinite(x)) throw NonFiniteLoss(std::string("non-finite ") + name + " term");
  return x;
}

}  // namespace

LossValues total_loss(ad::Tape& tape, const LossParts& parts, const LossWeights& weights,
                      const std::vector<GradientInjection>& injections) {
  weights.validate();
  LossValues v;
  v.l_c = scalar_of(parts.color, "L_c");
  v.l_m = scalar_of(parts.mask, "L_m");
  v.l_eik = scalar_of(parts.eikonal, "L_eik");
  v.total = v.l_c + weights.beta * v.l_m + weights.lambda * v.l_eik;

  std::vector<std::pair<ad::Var, MatX>> seeds;
  if (parts.color.valid()) seeds.emplace_back(parts.color, MatX::Ones(1, 1));
  if (parts.mask.valid() && weights.beta != 0.0) seeds.emplace_back(parts.mask, MatX::Constant(1, 1, weights.beta));
  if (parts.eikonal.valid() && weights.lambda != 0.0)
    seeds.emplace_back(parts.eikonal, MatX::Constant(1, 1, weights.lambda));
  double sq_c = 0.0;
  double sq_n = 0.0;
  for (const GradientInjection& inj : injections) {
    require(inj.node.valid(), "total_loss: injection without a node");
    require(inj.gradient.rows() == inj.node.rows() && inj.gradient.cols() == inj.node.cols(),
            "total_loss: injected gradient shape mismatch");
    if (!inj.gradient.allFinite()) throw NonFiniteLoss("non-finite injected SDS gradient");
    const double w = inj.kind == GuidanceKind::kColor ? weights.gamma : weights.gamma_n;
    if (w == 0.0) continue;
    MatX g = w * inj.gradient;
    (inj.kind == GuidanceKind::kColor ? sq_c : sq_n) += g.squaredNorm();
    seeds.emplace_back(inj.node, std::move(g));
  }
  v.g_sds = std::sqrt(sq_c);
  v.g_sds_n = std::sqrt(sq_n);
  if (!seeds.empty() && tape.recording()) tape.backward(seeds);
  return v;
}

void write_loss_csv_header(std::ostream& os) { os << "iteration,l_c,l_m,l_eik,g_sds,g_sds_n,total\n"; }

void write_loss_csv_row(std::ostream& os, const LossRecord& r) {
  const auto flags = os.flags();
  os << r.iteration << std::setprecision(10) << ',' << r.values.l_c << ',' << r.values.l_m << ',' << r.values.l_eik
     << ',' << r.values.g_sds << ',' << r.values.g_sds_n << ',' << r.values.total << '\n';
  os.flags(flags);
}

}  // namespace nsdf::losses
