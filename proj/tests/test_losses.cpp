#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "nsdf/field/analytic.hpp"
#include "nsdf/losses/losses.hpp"
#include "support.hpp"

using namespace nsdf;
using namespace nsdf::losses;
using nsdf::testing::max_relative_error;
using nsdf::testing::numeric_gradient;
using nsdf::testing::random_matrix;
using nsdf::testing::random_unit;

namespace {

field::SdfField toy_field(std::uint64_t seed) {
  field::SdfFieldSpec spec;
  spec.hidden = {16, 16};
  spec.encoding_levels = 2;
  spec.feature_dim = 2;
  field::SdfField f(spec);
  f.init_geometric(0.5, seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.05);
  for (Eigen::Index i = 0; i < f.params().size(); ++i) f.params()[i] += n(rng);
  return f;
}

}  // namespace

TEST_CASE("photometric loss") {
  std::mt19937_64 rng(1);
  const MatX a = random_matrix(rng, 10, 3, 0.0, 1.0);
  CHECK(photometric_loss(a, a) == 0.0);
  CHECK(photometric_loss(MatX::Zero(4, 3), MatX::Ones(4, 3)) == doctest::Approx(3.0));
  const MatX b = random_matrix(rng, 10, 3, 0.0, 1.0);
  double oracle = 0.0;
  for (int i = 0; i < 10; ++i) {
    double row = 0.0;
    for (int c = 0; c < 3; ++c) row += std::abs(a(i, c) - b(i, c));
    oracle += row;
  }
  oracle /= 10.0;
  CHECK(photometric_loss(a, b) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK_THROWS_AS(photometric_loss(MatX(0, 3), MatX(0, 3)), ValidationError);
}

TEST_CASE("mask loss") {
  VecX m(4);
  m << 1, 0, 1, 0;
  CHECK(mask_loss(m, m) <= 1.01e-5);
  CHECK(mask_loss(VecX::Constant(3, 0.5), VecX::Ones(3)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  std::mt19937_64 rng(2);
  const VecX p = random_matrix(rng, 20, 1, 0.0, 1.0).col(0);
  const VecX t = random_matrix(rng, 20, 1, 0.0, 1.0).col(0);
  double oracle = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double q = std::clamp(p[i], 1e-5, 1.0 - 1e-5);
    oracle -= t[i] * std::log(q) + (1.0 - t[i]) * std::log(1.0 - q);
  }
  CHECK(mask_loss(p, t) == doctest::Approx(oracle / 20.0).epsilon(1e-12));
}

TEST_CASE("eikonal loss") {
  std::mt19937_64 rng(3);
  MatX pts(50, 3);
  for (int i = 0; i < 50; ++i) pts.row(i) = (0.2 + 0.8 * (i / 50.0)) * random_unit(rng).transpose();
  const auto sphere = field::sphere_sdf(0.5);
  CHECK(eikonal_loss(sphere, pts) < 1e-10);
  CHECK(eikonal_loss(field::scaled_sdf(sphere, 2.0), pts) == doctest::Approx(1.0).epsilon(1e-12));

  // Gradient norms from central differences of the field values.
  const field::SdfField f = toy_field(4);
  double oracle = 0.0;
  const double h = 1e-5;
  for (int i = 0; i < 50; ++i) {
    Vec3 g;
    for (int k = 0; k < 3; ++k) {
      MatX a = pts.row(i);
      MatX b = pts.row(i);
      a(0, k) += h;
      b(0, k) -= h;
      g[k] = (f.values(a)[0] - f.values(b)[0]) / (2 * h);
    }
    oracle += (g.norm() - 1.0) * (g.norm() - 1.0);
  }
  oracle /= 50.0;
  CHECK(std::abs(eikonal_loss(f, pts) - oracle) <= 1e-3 * oracle);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(5);
  const MatX target = random_matrix(rng, 6, 3, 0.0, 1.0);
  const MatX mask = (random_matrix(rng, 6, 1, 0.0, 1.0).array() > 0.5).cast<double>().matrix();
  const VecX x0 = random_matrix(rng, 24, 1, 0.05, 0.95).col(0);
  auto loss = [&](const VecX& x, VecX* grad) {
    ad::Tape tape(grad != nullptr);
    ad::Var c = tape.param(x, grad, {0, 6, 3});
    ad::Var o = tape.param(x, grad, {18, 6, 1});
    ad::Var l = ad::add(photometric_loss(c, target), mask_loss(o, mask));
    if (grad) tape.backward(l);
    return l.value()(0, 0);
  };
  VecX g = VecX::Zero(24);
  loss(x0, &g);
  CHECK(max_relative_error(g, numeric_gradient([&](const VecX& x) { return loss(x, nullptr); }, x0), 1e-6) < 1e-3);
}

TEST_CASE("total loss composition") {
  const field::SdfField base = toy_field(6);
  std::mt19937_64 rng(7);
  const MatX pts = random_matrix(rng, 12, 3, -0.8, 0.8);
  const MatX target = random_matrix(rng, 12, 3, 0.0, 1.0);
  const MatX mask = (random_matrix(rng, 12, 1, 0.0, 1.0).array() > 0.5).cast<double>().matrix();

  // Stand-in render: color = sigmoid(feature block), opacity = sigmoid(-50 sdf).
  auto run = [&](const LossWeights& w, bool use_c, bool use_m, bool use_e) {
    VecX grad = VecX::Zero(base.params().size());
    ad::Tape tape;
    const field::SdfOutput out = base.forward(tape, pts, &grad);
    LossParts parts;
    const ad::Var color = ad::sigmoid(ad::concat_cols({out.feature, ad::slice_cols(out.feature, 0, 1)}));
    if (use_c) parts.color = photometric_loss(color, target);
    if (use_m) parts.mask = mask_loss(ad::sigmoid(ad::scale(out.sdf, -50.0)), mask);
    if (use_e) parts.eikonal = eikonal_from_gradients(out.gradient);
    const LossValues v = total_loss(tape, parts, w, {});
    return std::make_pair(v, grad);
  };
  LossWeights w;
  w.beta = 0.3;
  w.lambda = 0.7;
  const auto [all, g_all] = run(w, true, true, true);
  CHECK(all.total == doctest::Approx(all.l_c + 0.3 * all.l_m + 0.7 * all.l_eik).epsilon(1e-15));
  CHECK(all.total >= 0.0);

  LossWeights unit;
  unit.beta = unit.lambda = 1.0;
  const VecX g_c = run(unit, true, false, false).second;
  const VecX g_m = run(unit, false, true, false).second;
  const VecX g_e = run(unit, false, false, true).second;
  CHECK((g_all - (g_c + 0.3 * g_m + 0.7 * g_e)).cwiseAbs().maxCoeff() < 1e-10);

  LossWeights no_mask = w;
  no_mask.beta = 0.0;
  const VecX g_nm = run(no_mask, true, true, true).second;
  CHECK((g_nm - (g_c + 0.7 * g_e)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(run(no_mask, true, true, true).first.total == doctest::Approx(all.l_c + 0.7 * all.l_eik));

  LossWeights none;
  none.beta = none.lambda = 0.0;
  ad::Tape tape;
  const MatX img = random_matrix(rng, 5, 3, 0.0, 1.0);
  LossParts p;
  p.color = photometric_loss(tape.constant(img), img);
  p.mask = mask_loss(tape.constant(MatX::Constant(5, 1, 0.3)), MatX::Ones(5, 1));
  CHECK(total_loss(tape, p, none, {}).total == 0.0);
}

TEST_CASE("injected guidance gradient follows the chain rule") {
  // Two-parameter toy "field": image x = theta0 * a + theta1^2 * b.
  std::mt19937_64 rng(8);
  const MatX a = random_matrix(rng, 9, 3);
  const MatX b = random_matrix(rng, 9, 3);
  const MatX g = random_matrix(rng, 9, 3);
  VecX theta(2);
  theta << 0.4, -1.3;
  for (double gamma : {0.0, 1e-5, 2.5}) {
    VecX grad = VecX::Zero(2);
    ad::Tape tape;
    ad::Var t0 = tape.param(theta, &grad, {0, 1, 1});
    ad::Var t1 = tape.param(theta, &grad, {1, 1, 1});
    ad::Var x = ad::add(ad::mul_scalar(tape.constant(a), t0), ad::mul_scalar(tape.constant(b), ad::square(t1)));
    LossWeights w;
    w.gamma = gamma;
    w.gamma_n = 123.0;  // must not affect a color injection
    const LossValues v = total_loss(tape, {}, w, {{x, g, GuidanceKind::kColor}});
    CHECK(v.total == 0.0);
    const double d0 = gamma * (g.array() * a.array()).sum();
    const double d1 = gamma * (g.array() * b.array()).sum() * 2.0 * theta[1];
    CHECK(grad[0] == doctest::Approx(d0).epsilon(1e-12));
    CHECK(grad[1] == doctest::Approx(d1).epsilon(1e-12));
    CHECK(v.g_sds == doctest::Approx(gamma * g.norm()));
  }
}

TEST_CASE("non-finite terms abort the step") {
  ad::Tape tape;
  LossParts p;
  p.eikonal = tape.constant(MatX::Constant(1, 1, std::nan("")));
  CHECK_THROWS_AS(total_loss(tape, p, LossWeights{}, {}), NonFiniteLoss);
  ad::Var x = tape.constant(MatX::Zero(2, 2));
  MatX bad = MatX::Zero(2, 2);
  bad(1, 1) = INFINITY;
  CHECK_THROWS_AS(total_loss(tape, {}, LossWeights{}, {{x, bad, GuidanceKind::kNormal}}), NonFiniteLoss);
  LossWeights neg;
  neg.beta = -1.0;
  CHECK_THROWS_AS(neg.validate(), ValidationError);
}

TEST_CASE("loss csv") {
  std::ostringstream os;
  write_loss_csv_header(os);
  LossRecord r;
  r.iteration = 7;
  r.values.l_c = 0.5;
  r.values.total = 0.75;
  write_loss_csv_row(os, r);
  CHECK(os.str() == "iteration,l_c,l_m,l_eik,g_sds,g_sds_n,total\n7,0.5,0,0,0,0,0.75\n");
}
