#include <cmath>
#include <numbers>
#include <random>
#include <cstring>
#include <sstream>

#include "doctest.h"
#include "nsdf/field/analytic.hpp"
#include "nsdf/field/checkpoint.hpp"
#include "nsdf/field/encoding.hpp"
#include "nsdf/field/radiance_field.hpp"
#include "nsdf/field/sdf_field.hpp"
#include "support.hpp"

using namespace nsdf;
using namespace nsdf::field;
using nsdf::testing::max_relative_error;
using nsdf::testing::numeric_gradient;
using nsdf::testing::random_matrix;
using nsdf::testing::random_unit;

namespace {

SdfField small_field(std::vector<int> hidden, int levels, std::vector<int> skips = {}) {
  SdfFieldSpec spec;
  spec.hidden = std::move(hidden);
  spec.encoding_levels = levels;
  spec.feature_dim = 4;
  spec.skip_layers = std::move(skips);
  return SdfField(spec);
}

// Geometric init followed by a random perturbation, standing in for a partially trained field.
SdfField perturbed_field(SdfField f, std::uint64_t seed, double amount) {
  f.init_geometric(0.5, seed);
  std::mt19937_64 rng(seed + 100);
  std::normal_distribution<double> n(0.0, amount);
  for (Eigen::Index i = 0; i < f.params().size(); ++i) f.params()[i] += n(rng);
  return f;
}

double eikonal_value(const SdfModel& model, const MatX& pts, VecX* grad) {
  ad::Tape tape(grad != nullptr);
  const SdfOutput out = model.forward(tape, pts, grad);
  ad::Var loss = ad::mean(ad::square(ad::add_scalar(ad::row_norm(out.gradient), -1.0)));
  if (grad) tape.backward(loss);
  return loss.value()(0, 0);
}

}  // namespace

TEST_CASE("positional encoding layout") {
  MatX zero = MatX::Zero(1, 3);
  MatX e = positional_encode(zero, 2);
  REQUIRE(e.cols() == 15);
  for (int k = 0; k < 2; ++k) {
    for (int d = 0; d < 3; ++d) {
      CHECK(e(0, 3 + k * 6 + d) == 0.0);
      CHECK(e(0, 3 + k * 6 + 3 + d) == 1.0);
    }
  }
  MatX q(1, 3);
  q << std::numbers::pi / 2, 0, 0;
  e = positional_encode(q, 1);
  CHECK(e(0, 3) == doctest::Approx(1.0));
  CHECK(e(0, 6) == doctest::Approx(0.0));

  // Scalar oracle: every sin/cos term recomputed independently.
  std::mt19937_64 rng(5);
  const MatX p = random_matrix(rng, 7, 3, -2.0, 2.0);
  e = positional_encode(p, 4);
  REQUIRE(e.cols() == encoded_width(3, 4));
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (int d = 0; d < 3; ++d) CHECK(e(i, d) == p(i, d));
    for (int k = 0; k < 4; ++k) {
      const double freq = std::ldexp(1.0, k);
      for (int d = 0; d < 3; ++d) {
        CHECK(std::abs(e(i, 3 + k * 6 + d) - std::sin(freq * p(i, d))) < 1e-15);
        CHECK(std::abs(e(i, 3 + k * 6 + 3 + d) - std::cos(freq * p(i, d))) < 1e-15);
      }
    }
  }
}

TEST_CASE("encoding tangents match finite differences") {
  std::mt19937_64 rng(6);
  const MatX p = random_matrix(rng, 4, 3);
  const MatX t = positional_encode_tangents(p, 3);
  const double h = 1e-6;
  for (int j = 0; j < 3; ++j) {
    MatX pp = p;
    MatX pm = p;
    pp.col(j).array() += h;
    pm.col(j).array() -= h;
    const MatX fd = (positional_encode(pp, 3) - positional_encode(pm, 3)) / (2 * h);
    CHECK((t.middleRows(j * 4, 4) - fd).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("geometric init approximates a sphere") {
  CHECK_THROWS_AS(init_geometric(SdfField(SdfFieldSpec{}), 0.0), ValidationError);
  CHECK_THROWS_AS(init_geometric(SdfField(SdfFieldSpec{}), -1.0), ValidationError);

  const SdfField f = init_geometric(SdfField(SdfFieldSpec{}), 0.5, 3);
  CHECK(sdf_eval(f, Vec3::Zero()).first < 0.0);
  CHECK(sdf_eval(f, Vec3(0, 0, 1)).first > 0.0);
  CHECK(sdf_eval(f, Vec3::Zero()).first < -0.25);
  CHECK(std::abs(sdf_eval(f, Vec3(0.5, 0, 0)).first) < 0.05);

  std::mt19937_64 rng(11);
  int sign_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 d = random_unit(rng);
    if (sdf_eval(f, 0.25 * d).first < 0.0 && sdf_eval(f, 1.0 * d).first > 0.0) ++sign_ok;
  }
  CHECK(sign_ok >= 990);

  // Bisection along random rays from the origin.
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 d = random_unit(rng);
    double lo = 0.0;
    double hi = 1.0;
    for (int it = 0; it < 50; ++it) {
      const double mid = 0.5 * (lo + hi);
      (sdf_eval(f, mid * d).first < 0.0 ? lo : hi) = mid;
    }
    worst = std::max(worst, std::abs(0.5 * (lo + hi) - 0.5));
  }
  CHECK(worst < 0.1);
}

TEST_CASE("geometric init with a skip connection") {
  SdfFieldSpec spec;
  spec.hidden = {64, 64, 64, 64};
  spec.skip_layers = {2};
  const SdfField f = init_geometric(SdfField(spec), 0.5, 1);
  CHECK(sdf_eval(f, Vec3::Zero()).first < 0.0);
  CHECK(sdf_eval(f, Vec3(0, 1, 0)).first > 0.0);
}

TEST_CASE("analytic sphere gradient is radial") {
  const AnalyticSdf s = sphere_sdf(0.5);
  const Vec3 g = sdf_spatial_gradient(s, Vec3(1.0, 0, 0));
  CHECK((g - Vec3(1, 0, 0)).norm() < 1e-15);
}

TEST_CASE("spatial gradient matches finite differences") {
  for (int trial = 0; trial < 3; ++trial) {
    const SdfField f = perturbed_field(SdfField(SdfFieldSpec{}), 20 + trial, 0.02);
    std::mt19937_64 rng(30 + trial);
    for (int i = 0; i < 20; ++i) {
      const Vec3 p = random_matrix(rng, 3, 1, -0.9, 0.9).col(0);
      const Vec3 g = sdf_spatial_gradient(f, p);
      Vec3 fd;
      const double h = 1e-4;
      for (int k = 0; k < 3; ++k) {
        Vec3 a = p;
        Vec3 b = p;
        a[k] += h;
        b[k] -= h;
        fd[k] = (sdf_eval(f, a).first - sdf_eval(f, b).first) / (2 * h);
      }
      CHECK((g - fd).norm() <= 1e-3 * fd.norm());
    }
  }
}

TEST_CASE("batched values agree with the tape forward") {
  const SdfField f = perturbed_field(small_field({32, 32, 32}, 3, {2}), 2, 0.05);
  std::mt19937_64 rng(4);
  const MatX pts = random_matrix(rng, 16, 3);
  ad::Tape tape(false);
  const VecX a = f.forward(tape, pts, nullptr).sdf.value().col(0);
  const VecX b = f.values(pts);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("sdf and feature parameter gradients match finite differences") {
  const SdfField base = perturbed_field(small_field({16, 16, 16}, 1, {2}), 5, 0.1);
  std::mt19937_64 rng(8);
  const MatX pts = random_matrix(rng, 5, 3);
  const MatX wf = random_matrix(rng, 5, 4);
  auto loss = [&](const VecX& params, VecX* grad) {
    SdfField f = base;
    f.params() = params;
    ad::Tape tape(grad != nullptr);
    const SdfOutput out = f.forward(tape, pts, grad);
    ad::Var l = ad::add(ad::sum(ad::square(out.sdf)), ad::sum(ad::mul(out.feature, tape.constant(wf))));
    if (grad) tape.backward(l);
    return l.value()(0, 0);
  };
  VecX g = VecX::Zero(base.params().size());
  loss(base.params(), &g);
  const VecX num = numeric_gradient([&](const VecX& p) { return loss(p, nullptr); }, base.params());
  CHECK(max_relative_error(g, num, 1e-6) < 1e-3);
}

TEST_CASE("eikonal double backprop matches finite differences over parameters") {
  SUBCASE("small network, every parameter") {
    const SdfField base = perturbed_field(small_field({16, 16, 16}, 1, {2}), 9, 0.1);
    std::mt19937_64 rng(10);
    const MatX pts = random_matrix(rng, 6, 3);
    VecX g = VecX::Zero(base.params().size());
    eikonal_value(base, pts, &g);
    const VecX num = numeric_gradient(
        [&](const VecX& p) {
          SdfField f = base;
          f.params() = p;
          return eikonal_value(f, pts, nullptr);
        },
        base.params());
    CHECK(max_relative_error(g, num, 1e-6) < 1e-3);
  }
  SUBCASE("toy-size network, sampled parameters") {
    const SdfField base = perturbed_field(SdfField(SdfFieldSpec{}), 12, 0.02);
    std::mt19937_64 rng(13);
    const MatX pts = random_matrix(rng, 8, 3);
    VecX g = VecX::Zero(base.params().size());
    eikonal_value(base, pts, &g);
    std::uniform_int_distribution<Eigen::Index> pick(0, base.params().size() - 1);
    SdfField f = base;
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      const Eigen::Index k = pick(rng);
      const double h = 1e-5;
      f.params()[k] = base.params()[k] + h;
      const double fp = eikonal_value(f, pts, nullptr);
      f.params()[k] = base.params()[k] - h;
      const double fm = eikonal_value(f, pts, nullptr);
      f.params()[k] = base.params()[k];
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-6}));
    }
    CHECK(worst < 1e-3);
  }
}

TEST_CASE("radiance field is bounded and differentiable") {
  RadianceFieldSpec spec;
  spec.hidden = {16, 16};
  spec.feature_dim = 4;
  spec.dir_encoding_levels = 2;
  RadianceField rad(spec);
  rad.init_default(3);
  std::mt19937_64 rng(14);
  const MatX pts = random_matrix(rng, 6, 3);
  MatX dirs(6, 3);
  for (int i = 0; i < 6; ++i) dirs.row(i) = random_unit(rng).transpose();
  const MatX normals = random_matrix(rng, 6, 3);
  const MatX feats = random_matrix(rng, 6, 4);
  const MatX w = random_matrix(rng, 6, 3);

  {
    ad::Tape tape(false);
    const MatX c = rad.forward(tape, 10.0 * pts, dirs, tape.constant(50.0 * normals), tape.constant(feats), nullptr)
                       .value();
    CHECK(c.minCoeff() >= 0.0);
    CHECK(c.maxCoeff() <= 1.0);
  }

  // Gradient w.r.t. radiance params and, through the normal and feature inputs, upstream leaves.
  const Eigen::Index np = rad.params().size();
  VecX x(np + 18 + 24);
  x << rad.params(), Eigen::Map<const VecX>(normals.data(), 18), Eigen::Map<const VecX>(feats.data(), 24);
  auto loss = [&](const VecX& v, VecX* grad) {
    RadianceField r = rad;
    r.params() = v.head(np);
    ad::Tape tape(grad != nullptr);
    VecX gp = VecX::Zero(np);
    ad::Var n = tape.param(v, grad, {np, 6, 3});
    ad::Var f = tape.param(v, grad, {np + 18, 6, 4});
    ad::Var c = r.forward(tape, pts, dirs, n, f, grad ? &gp : nullptr);
    ad::Var l = ad::sum(ad::mul(c, tape.constant(w)));
    if (grad) {
      tape.backward(l);
      grad->head(np) += gp;
    }
    return l.value()(0, 0);
  };
  VecX g = VecX::Zero(x.size());
  loss(x, &g);
  const VecX num = numeric_gradient([&](const VecX& v) { return loss(v, nullptr); }, x);
  CHECK(max_relative_error(g, num, 1e-6) < 1e-3);
}

TEST_CASE("evaluation is deterministic") {
  const SdfField a = init_geometric(SdfField(SdfFieldSpec{}), 0.5, 77);
  const SdfField b = init_geometric(SdfField(SdfFieldSpec{}), 0.5, 77);
  CHECK(a.params() == b.params());
  const Vec3 p(0.1, -0.2, 0.3);
  const auto [v1, f1] = sdf_eval(a, p);
  const auto [v2, f2] = sdf_eval(b, p);
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
  CHECK(f1 == f2);
}

TEST_CASE("checkpoint round trip is bit exact") {
  SdfFieldSpec spec;
  spec.skip_layers = {2};
  const SdfField f = perturbed_field(SdfField(spec), 3, 0.1);
  std::stringstream ss;
  write_checkpoint(ss, f);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "NSDF");
  const SdfField g = read_sdf_checkpoint(ss);
  CHECK(g.spec().hidden == f.spec().hidden);
  CHECK(g.spec().skip_layers == f.spec().skip_layers);
  CHECK(g.spec().encoding_levels == f.spec().encoding_levels);
  REQUIRE(g.params().size() == f.params().size());
  CHECK(std::memcmp(g.params().data(), f.params().data(), sizeof(double) * f.params().size()) == 0);
  std::stringstream again;
  write_checkpoint(again, g);
  CHECK(again.str() == bytes);

  RadianceField r(RadianceFieldSpec{});
  r.init_default(4);
  std::stringstream rs;
  write_checkpoint(rs, r);
  const RadianceField r2 = read_radiance_checkpoint(rs);
  CHECK(r2.params() == r.params());

  std::stringstream bad("XXXX1234");
  CHECK_THROWS_AS(read_sdf_checkpoint(bad), RuntimeError);
  std::stringstream wrong_kind(rs.str());
  CHECK_THROWS_AS(read_sdf_checkpoint(wrong_kind), RuntimeError);
}

TEST_CASE("shape parser") {
  CHECK(parse_shape("sphere:0.5")(Vec3(1, 0, 0)) == doctest::Approx(0.5));
  CHECK(parse_shape("box:0.5,0.5,0.5")(Vec3(0, 0, 1)) == doctest::Approx(0.5));
  CHECK(parse_shape("torus:0.5,0.1")(Vec3(0.5, 0, 0)) == doctest::Approx(-0.1));
  CHECK(parse_shape("union:sphere:0.2|box:0.1,0.1,0.1")(Vec3(0, 0, 0)) < 0.0);
  CHECK_THROWS_AS(parse_shape("cone:1"), ValidationError);
  CHECK_THROWS_AS(parse_shape("sphere:-1"), ValidationError);
}
