// Acceptance run: one PASS/FAIL line per criterion 1-8.

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "nsdf/field/analytic.hpp"
#include "nsdf/field/sdf_field.hpp"
#include "nsdf/losses/losses.hpp"
#include "nsdf/mesh/bvh.hpp"
#include "nsdf/mesh/evaluation.hpp"
#include "nsdf/mesh/marching_cubes.hpp"
#include "nsdf/render/render.hpp"
#include "nsdf/scene/pipeline.hpp"
#include "nsdf/scene/scene.hpp"
#include "nsdf/sds/guidance.hpp"
#include "nsdf/sds/schedule.hpp"
#include "nsdf/sds/sds.hpp"
#include "nsdf/trainer/trainer.hpp"
#include "quadrature.hpp"

namespace fs = std::filesystem;
using namespace nsdf;
using mesh::TriangleMesh;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

// ---------------------------------------------------------------- helpers

MatX uniform(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatX m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

Vec3 unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

double rms(const MatX& m) { return std::sqrt(m.squaredNorm() / static_cast<double>(m.size())); }

VecX central_diff(const std::function<double(const VecX&)>& f, const VecX& x, double h = 1e-6) {
  VecX g(x.size());
  VecX y = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    y[i] = x[i] + h;
    const double a = f(y);
    y[i] = x[i] - h;
    const double b = f(y);
    y[i] = x[i];
    g[i] = (a - b) / (2 * h);
  }
  return g;
}

double rel_error(const VecX& a, const VecX& b, double floor = 1e-6) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
  return worst;
}

field::SdfField noisy_sdf(field::SdfFieldSpec spec, std::uint64_t seed, double amount) {
  field::SdfField f(std::move(spec));
  f.init_geometric(0.5, seed);
  std::mt19937_64 rng(seed + 7);
  std::normal_distribution<double> n(0.0, amount);
  for (Eigen::Index i = 0; i < f.params().size(); ++i) f.params()[i] += n(rng);
  return f;
}

field::SdfFieldSpec small_sdf_spec(int feature_dim) {
  field::SdfFieldSpec s;
  s.hidden = {16, 16, 16};
  s.encoding_levels = 1;
  s.feature_dim = feature_dim;
  s.skip_layers = {2};
  return s;
}

TriangleMesh icosphere(int levels, double radius = 1.0) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& p : v) p.normalize();
  for (int l = 0; l < levels; ++l) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      v.push_back((v[static_cast<std::size_t>(a)] + v[static_cast<std::size_t>(b)]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& tri : f) {
      const int a = midpoint(tri[0], tri[1]);
      const int b = midpoint(tri[1], tri[2]);
      const int c = midpoint(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriangleMesh m;
  m.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = radius * v[i].transpose();
  m.triangles.resize(static_cast<Eigen::Index>(f.size()), 3);
  for (std::size_t i = 0; i < f.size(); ++i)
    m.triangles.row(static_cast<Eigen::Index>(i)) << f[i][0], f[i][1], f[i][2];
  return m;
}

TriangleMesh random_soup(std::mt19937_64& rng, int vertices, int triangles) {
  TriangleMesh m;
  m.vertices = uniform(rng, vertices, 3);
  m.triangles.resize(triangles, 3);
  std::uniform_int_distribution<int> pick(0, vertices - 1);
  for (int t = 0; t < triangles; ++t) {
    int a = pick(rng), b = pick(rng), c = pick(rng);
    while (b == a) b = pick(rng);
    while (c == a || c == b) c = pick(rng);
    m.triangles.row(t) << a, b, c;
  }
  return m;
}

class FixedOracle final : public sds::GuidanceOracle {
 public:
  explicit FixedOracle(render::Image g) : g_(std::move(g)) {}
  sds::GuidanceResponse sds_gradient(const sds::GuidanceRequest& r) override {
    last = r;
    return {g_};
  }
  sds::OracleHealth health() override { return {"ok", "fixed", sds::schedule_hash()}; }
  sds::GuidanceRequest last;

 private:
  render::Image g_;
};

// Predicts the injected noise exactly.
class EchoPredictor final : public sds::NoisePredictor {
 public:
  explicit EchoPredictor(MatX eps) : eps_(std::move(eps)) {}
  sds::NoiseEstimate predict(const render::Image&, double, const std::string&) override { return {eps_, eps_}; }

 private:
  MatX eps_;
};

// ---------------------------------------------------------------- 1

void gradients(Outcome& o) {
  double worst = 0.0;
  auto note = [&](const std::string& name, double err) {
    worst = std::max(worst, err);
    o.check(err < 1e-3, name + " rel err " + std::to_string(err));
  };

  {  // SDF value and feature w.r.t. parameters
    const field::SdfField base = noisy_sdf(small_sdf_spec(4), 5, 0.1);
    std::mt19937_64 rng(8);
    const MatX pts = uniform(rng, 5, 3);
    const MatX wf = uniform(rng, 5, 4);
    auto loss = [&](const VecX& p, VecX* g) {
      field::SdfField f = base;
      f.params() = p;
      ad::Tape tape(g != nullptr);
      const field::SdfOutput out = f.forward(tape, pts, g);
      ad::Var l = ad::add(ad::sum(ad::square(out.sdf)), ad::sum(ad::mul(out.feature, tape.constant(wf))));
      if (g) tape.backward(l);
      return l.value()(0, 0);
    };
    VecX g = VecX::Zero(base.params().size());
    loss(base.params(), &g);
    note("sdf params", rel_error(g, central_diff([&](const VecX& p) { return loss(p, nullptr); }, base.params())));
  }
  {  // spatial gradient of the toy-size field
    const field::SdfField f = noisy_sdf(field::SdfFieldSpec{}, 20, 0.02);
    std::mt19937_64 rng(30);
    double err = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vec3 p = uniform(rng, 3, 1, -0.9, 0.9).col(0);
      const Vec3 g = field::sdf_spatial_gradient(f, p);
      Vec3 fd;
      for (int k = 0; k < 3; ++k) {
        Vec3 a = p, b = p;
        a[k] += 1e-4;
        b[k] -= 1e-4;
        fd[k] = (field::sdf_eval(f, a).first - field::sdf_eval(f, b).first) / 2e-4;
      }
      err = std::max(err, (g - fd).norm() / fd.norm());
    }
    note("spatial gradient", err);
  }
  {  // Eikonal double backprop, every parameter of a small net and sampled ones of the toy net
    auto eik = [](const field::SdfModel& m, const MatX& pts, VecX* g) {
      ad::Tape tape(g != nullptr);
      ad::Var l = losses::eikonal_loss(tape, m, pts, g);
      if (g) tape.backward(l);
      return l.value()(0, 0);
    };
    const field::SdfField small = noisy_sdf(small_sdf_spec(4), 9, 0.1);
    std::mt19937_64 rng(10);
    const MatX pts = uniform(rng, 6, 3);
    VecX g = VecX::Zero(small.params().size());
    eik(small, pts, &g);
    const VecX num = central_diff(
        [&](const VecX& p) {
          field::SdfField f = small;
          f.params() = p;
          return eik(f, pts, nullptr);
        },
        small.params());
    note("eikonal (small net)", rel_error(g, num));

    const field::SdfField toy = noisy_sdf(field::SdfFieldSpec{}, 12, 0.02);
    const MatX pts2 = uniform(rng, 8, 3);
    VecX g2 = VecX::Zero(toy.params().size());
    eik(toy, pts2, &g2);
    std::uniform_int_distribution<Eigen::Index> pick(0, toy.params().size() - 1);
    field::SdfField f = toy;
    double err = 0.0;
    for (int i = 0; i < 150; ++i) {
      const Eigen::Index k = pick(rng);
      f.params()[k] = toy.params()[k] + 1e-5;
      const double a = eik(f, pts2, nullptr);
      f.params()[k] = toy.params()[k] - 1e-5;
      const double b = eik(f, pts2, nullptr);
      f.params()[k] = toy.params()[k];
      const double fd = (a - b) / 2e-5;
      err = std::max(err, std::abs(fd - g2[k]) / std::max({std::abs(fd), std::abs(g2[k]), 1e-6}));
    }
    note("eikonal (toy net)", err);
  }
  {  // NeuS weights through color, normal and opacity, including the sharpness
    field::SdfFieldSpec ss;
    ss.hidden = {16, 16};
    ss.encoding_levels = 2;
    ss.feature_dim = 3;
    const field::SdfField sdf0 = noisy_sdf(ss, 11, 0.05);
    field::RadianceFieldSpec rs;
    rs.hidden = {16};
    rs.feature_dim = 3;
    rs.dir_encoding_levels = 1;
    field::RadianceField rad0(rs);
    rad0.init_default(12);
    render::SamplingSpec spec;
    spec.n_coarse = 6;
    spec.n_fine = 4;
    const render::Camera cam =
        render::look_at_pinhole(Vec3(0.3, -2.0, 1.2), Vec3::Zero(), Vec3::UnitZ(), 35.0, 3, 2);
    const render::RayBundle rays = render::generate_all_rays(cam);
    const MatX depths = render::sample_depths(sdf0, rays, spec, nullptr);
    std::mt19937_64 rng(13);
    const MatX wc = uniform(rng, rays.size(), 3), wn = uniform(rng, rays.size(), 3), wo = uniform(rng, rays.size(), 1);
    const Eigen::Index ns = sdf0.params().size(), nr = rad0.params().size();
    auto loss = [&](const VecX& x, VecX* grad) {
      field::SdfField sdf = sdf0;
      field::RadianceField rad = rad0;
      sdf.params() = x.head(ns);
      rad.params() = x.segment(ns, nr);
      ad::Tape tape(grad != nullptr);
      VecX gs = VecX::Zero(ns), gr = VecX::Zero(nr);
      ad::Var s = ad::exp(ad::scale(tape.param(x, grad, {ns + nr, 1, 1}), 10.0));
      const render::RenderNodes n =
          render::render_rays(tape, sdf, &rad, rays, depths, spec, s, grad ? &gs : nullptr, grad ? &gr : nullptr);
      ad::Var l = ad::add(ad::add(ad::sum(ad::mul(n.color, tape.constant(wc))),
                                  ad::sum(ad::mul(n.normal, tape.constant(wn)))),
                          ad::sum(ad::mul(n.opacity, tape.constant(wo))));
      if (grad) {
        tape.backward(l);
        grad->head(ns) += gs;
        grad->segment(ns, nr) += gr;
      }
      return l.value()(0, 0);
    };
    VecX x(ns + nr + 1);
    x << sdf0.params(), rad0.params(), 0.25;
    VecX g = VecX::Zero(x.size());
    loss(x, &g);
    note("render", rel_error(g, central_diff([&](const VecX& v) { return loss(v, nullptr); }, x)));
  }
  {  // photometric and mask losses
    std::mt19937_64 rng(5);
    const MatX target = uniform(rng, 6, 3, 0.0, 1.0);
    const MatX mask = (uniform(rng, 6, 1, 0.0, 1.0).array() > 0.5).cast<double>().matrix();
    const VecX x0 = uniform(rng, 24, 1, 0.05, 0.95).col(0);
    auto loss = [&](const VecX& x, VecX* g) {
      ad::Tape tape(g != nullptr);
      ad::Var l = ad::add(losses::photometric_loss(tape.param(x, g, {0, 6, 3}), target),
                          losses::mask_loss(tape.param(x, g, {18, 6, 1}), mask));
      if (g) tape.backward(l);
      return l.value()(0, 0);
    };
    VecX g = VecX::Zero(24);
    loss(x0, &g);
    note("losses", rel_error(g, central_diff([&](const VecX& x) { return loss(x, nullptr); }, x0)));
  }
  {  // SDS injection through resize, grid, RGB mapping and rotation
    std::mt19937_64 rng(8);
    sds::GuidanceSettings st;
    st.oracle_resolution = 8;
    const render::Image g8(8, 8, uniform(rng, 64, 3));
    FixedOracle oracle(g8);
    std::vector<render::Image> buffer;
    for (int i = 0; i < 3; ++i) buffer.emplace_back(4, 4, uniform(rng, 16, 3, -0.6, 0.6));
    const MatX n0 = uniform(rng, 16, 3, -0.6, 0.6);
    for (sds::SdsMode mode : {sds::SdsMode::kColor, sds::SdsMode::kNormalSingle, sds::SdsMode::kNormalMulti}) {
      std::mt19937_64 r1(99);
      const MatX x0 = mode == sds::SdsMode::kColor ? MatX((n0.array() + 1.0) * 0.5) : n0;
      const sds::GuidanceResult res = sds::apply_guidance(x0, 4, 4, mode, buffer, st, oracle, r1);
      auto virtual_loss = [&](const VecX& v) {
        std::mt19937_64 r2(99);
        sds::apply_guidance(Eigen::Map<const MatX>(v.data(), 16, 3), 4, 4, mode, buffer, st, oracle, r2);
        return (oracle.last.image.data.array() * g8.data.array()).sum();
      };
      const VecX flat = Eigen::Map<const VecX>(x0.data(), x0.size());
      const VecX fd = central_diff(virtual_loss, flat);
      const VecX an = Eigen::Map<const VecX>(res.gradient.data(), res.gradient.size());
      note(std::string("sds ") + sds::to_string(mode), (an - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff());
    }
  }
  o.detail << "worst relative error " << worst;
}

// ---------------------------------------------------------------- 2

void rendering(Outcome& o) {
  using testing::dense_reference;
  render::SamplingSpec spec;
  const auto sphere = field::sphere_sdf(0.5);
  const auto plane = field::plane_sdf(Vec3(0.2, 0.3, 1.0), 0.1);
  const auto torus = field::torus_sdf(0.5, 0.2);
  const field::PositionRadiance pos;
  auto pos_color = [](const Vec3& p) { return Vec3((0.5 + 0.5 * p.array()).cwiseMax(0.0).cwiseMin(1.0)); };
  auto ray = [](const Vec3& origin, const Vec3& d, double bound) {
    render::RayBundle r;
    r.origins = origin.transpose();
    r.directions = d.normalized().transpose();
    r.pixels = Eigen::Matrix<int, 1, 2>(0, 0);
    render::bound_rays(r, bound);
    return r;
  };
  std::mt19937_64 rng(3);
  double color_err = 0.0, normal_err = 0.0, opacity_err = 0.0;
  for (const field::AnalyticSdf* shape : {&sphere, &plane, &torus}) {
    for (int k = 0; k < 8; ++k) {
      const Vec3 origin = 2.0 * unit(rng) + Vec3(0, 0, 2.0);
      const Vec3 target = 0.4 * uniform(rng, 3, 1).col(0);
      const render::RayBundle r = ray(origin, target - origin, 1.0);
      const Vec3 d = r.directions.row(0).transpose();
      const auto ref = dense_reference(*shape, origin, d, r.near[0], r.far[0], 256.0, pos_color, spec.background);
      const MatX c = render::render_color(*shape, pos, r, spec, 256.0);
      color_err = std::max(color_err, (c.row(0).transpose() - ref.color).cwiseAbs().maxCoeff());
      const Vec3 n = render::render_normal_map(*shape, r, spec, 256.0).row(0).transpose();
      if (ref.normal.norm() > 0.5) normal_err = std::max(normal_err, (n.normalized() - ref.normal.normalized()).norm());
    }
  }
  for (int k = 0; k < 10; ++k) {  // rays through the sphere's interior are opaque
    const Vec3 origin = 2.5 * unit(rng);
    const render::RayBundle r = ray(origin, 0.2 * uniform(rng, 3, 1).col(0) - origin, 1.0);
    opacity_err = std::max(opacity_err, std::abs(render::render_opacity(sphere, r, spec, 256.0)[0] - 1.0));
  }
  o.check(color_err < 1e-3, "color");
  o.check(normal_err < 0.02, "normal");
  o.check(opacity_err < 1e-2, "opacity");
  o.detail << "color max err " << color_err << ", normal dir err " << normal_err << ", opacity err " << opacity_err;
}

// ---------------------------------------------------------------- 3

void sds_fixed_point(Outcome& o) {
  const sds::DiffusionSchedule s;
  std::mt19937_64 rng(5);
  const render::Image mean(8, 8, uniform(rng, 64, 3, 0.2, 0.8));
  sds::ToyGaussianPredictor toy(mean, 0.01);
  render::Image x(8, 8, 3, 0.0);
  int steps = 0;
  for (; steps < 2000 && rms(x.data - mean.data) >= 1e-2; ++steps)
    x.data -= sds::sds_gradient(x, sds::sample_timestep(rng), uniform(rng, 64, 3), toy, "p", 100.0, s);
  o.check(rms(x.data - mean.data) < 1e-2, "no convergence in 2000 steps");

  double exact = 0.0;
  for (int k = 0; k < 20; ++k) {
    const render::Image img(8, 8, uniform(rng, 64, 3, 0.0, 1.0));
    const MatX eps = uniform(rng, 64, 3);
    EchoPredictor echo(eps);
    const MatX g = sds::sds_gradient(img, sds::sample_timestep(rng), eps, echo, "p", 7.5, s);
    exact = std::max(exact, g.cwiseAbs().maxCoeff());
  }
  o.check(exact == 0.0, "exact prediction left a nonzero gradient");
  o.detail << "converged to rms " << rms(x.data - mean.data) << " in " << steps
           << " steps; exact-prediction gradient max |g| = " << exact;
}

// ---------------------------------------------------------------- 4

void frozen(Outcome& o) {
  const sds::DiffusionSchedule s;
  std::mt19937_64 rng(13);
  const render::Image mean(8, 8, uniform(rng, 64, 3, 0.2, 0.8));
  sds::ToyGaussianPredictor toy(mean, 0.5);
  const render::Image x(8, 8, uniform(rng, 64, 3, 0.0, 1.0));

  sds::FrozenNoise fz(1234);
  const MatX a = sds::frozen_sds_gradient(x, 0.3, fz, toy, "p", 100.0, s);
  const MatX b = sds::frozen_sds_gradient(x, 0.3, fz, toy, "p", 100.0, s);
  sds::FrozenNoise fz2(1234);
  const MatX c = sds::frozen_sds_gradient(x, 0.3, fz2, toy, "p", 100.0, s);
  const bool bitwise = std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0 &&
                       std::memcmp(a.data(), c.data(), sizeof(double) * a.size()) == 0;
  o.check(bitwise, "frozen gradient not bitwise repeatable");

  // Variance over 100 steps of one trajectory, t ~ U[0, 0.5].
  sds::FrozenNoise fz3(5);
  std::vector<MatX> standard, fixed;
  for (int k = 0; k < 100; ++k) {
    const double t = sds::sample_timestep(rng);
    standard.push_back(sds::sds_gradient(x, t, uniform(rng, 64, 3), toy, "p", 100.0, s));
    fixed.push_back(sds::frozen_sds_gradient(x, t, fz3, toy, "p", 100.0, s));
  }
  auto variance = [](const std::vector<MatX>& g) {
    MatX mu = MatX::Zero(g[0].rows(), g[0].cols());
    for (const MatX& m : g) mu += m;
    mu /= static_cast<double>(g.size());
    double v = 0.0;
    for (const MatX& m : g) v += (m - mu).squaredNorm();
    return v / static_cast<double>(g.size() - 1);
  };
  const double v_std = variance(standard), v_frz = variance(fixed);
  o.check(v_frz < v_std, "frozen variance not lower");

  // Steps to the toy optimum from the same start with the same timesteps.
  sds::ToyGaussianPredictor sharp(mean, 0.01);
  auto run = [&](bool use_frozen) {
    std::mt19937_64 tr(77), nr(78);
    sds::FrozenNoise f(9);
    render::Image y(8, 8, 3, 0.0);
    int steps = 0;
    for (; steps < 5000 && rms(y.data - mean.data) >= 1e-2; ++steps) {
      const double t = sds::sample_timestep(tr);
      const MatX eps = uniform(nr, 64, 3);
      y.data -= use_frozen ? sds::frozen_sds_gradient(y, t, f, sharp, "p", 100.0, s)
                           : sds::sds_gradient(y, t, eps, sharp, "p", 100.0, s);
    }
    return steps;
  };
  const int n_std = run(false), n_frz = run(true);
  o.check(n_frz < 5000 && n_frz <= n_std, "frozen run needed more steps");
  o.detail << "variance standard " << v_std << " vs frozen " << v_frz << "; steps to optimum standard " << n_std
           << " vs frozen " << n_frz;
}

// ---------------------------------------------------------------- 5

void stop_gradient(Outcome& o) {
  std::mt19937_64 rng(9);
  long leaked = 0, checked = 0;
  for (int q = 0; q < 4; ++q) {
    // The oracle gradient covers the whole grid; only the active tile may receive any of it.
    const render::Image g(8, 8, uniform(rng, 64, 3));
    FixedOracle oracle(g);
    std::vector<render::Image> buffer;
    for (int i = 0; i < 3; ++i) buffer.emplace_back(4, 4, uniform(rng, 16, 3, -0.6, 0.6));
    sds::GuidanceSettings st;
    st.oracle_resolution = 8;
    st.active_quadrant = q;
    st.rotate_normals = false;
    std::mt19937_64 r(1);
    const MatX n0 = uniform(rng, 16, 3, -0.6, 0.6);
    const sds::GuidanceResult res = sds::apply_guidance(n0, 4, 4, sds::SdsMode::kNormalMulti, buffer, st, oracle, r);
    o.check(res.mode == sds::SdsMode::kNormalMulti, "multi-view fell back");
    const render::Image grid_grad = sds::resize_bilinear_adjoint(g, 8, 8);
    const render::Image active = sds::grid_active_gradient(grid_grad, 4, 4, q);
    // Reassemble the full-grid adjoint and audit the visible quadrants.
    const sds::Grid layout = sds::compose_grid(render::Image(4, 4, 3), {render::Image(4, 4, 3), render::Image(4, 4, 3),
                                                                        render::Image(4, 4, 3)}, q);
    render::Image full(8, 8, 3);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        for (int ch = 0; ch < 3; ++ch) full.at((q % 2) * 4 + x, (q / 2) * 4 + y, ch) = active.at(x, y, ch);
    for (Eigen::Index p = 0; p < 64; ++p) {
      if (layout.mask.data(p, 0) != 0.0) continue;
      ++checked;
      if (full.data.row(p).cwiseAbs().maxCoeff() != 0.0) ++leaked;
    }
    o.check(res.gradient.rows() == 16, "gradient not restricted to the active tile");
  }
  o.check(leaked == 0, "gradient reached visible quadrants");

  bool pattern = true;
  const std::vector<sds::SdsMode> want = {sds::SdsMode::kNormalSingle, sds::SdsMode::kNormalMulti,
                                          sds::SdsMode::kNormalSingle, sds::SdsMode::kColor};
  for (long k = 0; k < 4000; k += 4) {
    int colors = 0;
    for (long j = 0; j < 4; ++j) colors += trainer::sds_mode_scheduler(k + j, true, true) == sds::SdsMode::kColor;
    pattern &= colors == 1 && trainer::sds_mode_scheduler(k + 3, true, true) == sds::SdsMode::kColor;
  }
  for (long k = 0; k < 4; ++k) pattern &= trainer::sds_mode_scheduler(k, true, true) == want[static_cast<std::size_t>(k)];
  o.check(pattern, "scheduler pattern");
  o.detail << checked << " visible-quadrant pixels, " << leaked << " with nonzero gradient; period-4 schedule with "
           << "one color step per period over 1000 periods";
}

// ---------------------------------------------------------------- 6

void end_to_end(Outcome& o, const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path scene_dir = work / "toy_scene";
  const fs::path run_dir = work / "toy_run";
  fs::remove_all(scene_dir);
  fs::remove_all(run_dir);
  scene::SynthOptions so;  // analytic sphere, 8 visible on +z, 4 guidance views on -z
  scene::synth_scene(scene_dir, so);
  const scene::Scene sc = scene::load_scene(scene_dir);

  const trainer::TrainConfig cfg = trainer::toy_config();
  const auto oracle = trainer::make_oracle(cfg);
  const trainer::FitResult fit = trainer::fit(cfg, sc.views, oracle.get(), run_dir);
  const TriangleMesh recon = scene::extract_from_checkpoint(fit.final_checkpoint, 128, 1.0);
  mesh::write_mesh(run_dir / "recon.ply", recon);

  std::vector<render::Camera> cams;
  for (const auto& v : sc.views.visible) cams.push_back(v.camera);
  const auto reference = scene::load_reference_mesh(scene_dir, sc.manifest);
  o.check(reference.has_value(), "scene has no reference mesh");
  const mesh::MetricsReport report = scene::evaluate_against(*reference, recon, cams);
  std::ofstream(run_dir / "metrics.json") << report.to_json() << '\n';
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  // Photometric loss early vs late, averaged over visible steps.
  std::vector<double> lc;
  for (const auto& r : fit.records)
    if (r.kind == trainer::ViewKind::kVisible) lc.push_back(r.values.l_c);
  const std::size_t w = std::min<std::size_t>(20, lc.size() / 2);
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < w; ++i) {
    early += lc[i];
    late += lc[lc.size() - 1 - i];
  }

  const double vr = report.visible_recall.value_or(0.0);
  o.check(report.visible_recall.has_value() && vr >= 0.95, "visible recall below 0.95");
  o.check(seconds < 600.0, "runtime over 10 min");
  o.detail << "visible recall " << vr << " (recall " << report.recall << ", precision " << report.precision
           << "), photometric loss late/early " << (early > 0 ? late / early : 0.0) << ", fit " << fit.seconds
           << " s, total " << seconds << " s";
}

// ---------------------------------------------------------------- 7

void evaluation(Outcome& o) {
  const TriangleMesh sphere = icosphere(4);
  mesh::EvalOptions opt;
  const mesh::MetricsReport self = mesh::evaluate_geometry(sphere, sphere, opt);
  o.check(self.f_score == 1.0, "self F-score");

  const TriangleMesh moved = mesh::transformed(sphere, Vec3(-0.05, 0.0, 0.0), 1.0);
  const mesh::Bvh a(sphere), b(moved);
  const auto sa = mesh::resample_surface(sphere, opt.spacing, 0);
  const auto sb = mesh::resample_surface(moved, opt.spacing, 1);
  const mesh::PrecisionRecall pr = mesh::precision_recall(sb, b, sa, a, 0.02);
  o.check(pr.precision < 0.2 && pr.recall < 0.2, "translated sphere p = " + std::to_string(pr.precision) +
                                                     ", r = " + std::to_string(pr.recall) + " (not < 0.2)");

  std::mt19937_64 rng(21);
  long mismatches = 0, queries = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const TriangleMesh m = trial % 2 ? random_soup(rng, 60, 25 * (trial + 1)) : icosphere(trial % 4 == 0 ? 2 : 1);
    const mesh::Bvh bvh(m);
    for (int q = 0; q < 200; ++q, ++queries) {
      const Vec3 p = 1.5 * uniform(rng, 3, 1).col(0);
      const Vec3 d = unit(rng);
      const auto ca = bvh.closest(p);
      const auto cb = mesh::brute_force_closest(m, p);
      const auto ha = bvh.intersect(p, d);
      const auto hb = mesh::brute_force_intersect(m, p, d);
      if (ca.distance2 != cb.distance2 || ca.triangle != cb.triangle || ha.triangle != hb.triangle ||
          (hb.hit() && ha.t != hb.t))
        ++mismatches;
    }
  }
  o.check(mismatches == 0, "bvh/brute-force disagreement");

  const TriangleMesh ico = icosphere(3);
  std::vector<render::Camera> cams;
  for (int i = 0; i < 8; ++i) {
    const double az = 2.0 * std::numbers::pi * i / 8.0, el = std::numbers::pi / 3.0;
    const Vec3 eye = 3.0 * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(render::look_at_pinhole(eye, Vec3::Zero(), Vec3::UnitZ(), 40, 64, 64));
  }
  const auto flags = mesh::mark_visible(ico, cams);
  const double band = std::sin(10.0 * std::numbers::pi / 180.0);
  long wrong = 0, classified = 0;
  for (Eigen::Index t = 0; t < ico.triangle_count(); ++t) {
    const double z = ico.center(t).normalized().z();
    if (std::abs(z) <= band) continue;
    ++classified;
    if ((flags[static_cast<std::size_t>(t)] == 1) != (z > 0)) ++wrong;
  }
  o.check(wrong == 0, "hemisphere visibility");

  // View filter on the hemisphere fixture: upper half flagged, views at fixed elevations.
  TriangleMesh hemi = ico;
  hemi.visible.resize(static_cast<std::size_t>(hemi.triangle_count()));
  for (Eigen::Index t = 0; t < hemi.triangle_count(); ++t)
    hemi.visible[static_cast<std::size_t>(t)] = hemi.unit_normal(t).z() > 0.0;
  std::vector<render::Camera> views;
  std::vector<bool> back_facing;
  for (double el : {-80.0, -60.0, -40.0, -30.0, 0.0, 30.0, 60.0, 80.0}) {
    for (int i = 0; i < 4; ++i) {
      const double e = el * std::numbers::pi / 180.0, az = 0.3 + i * std::numbers::pi / 2.0;
      const Vec3 dir(std::cos(e) * std::cos(az), std::cos(e) * std::sin(az), std::sin(e));
      const Vec3 up = std::abs(dir.z()) > 0.99 ? Vec3::UnitY() : Vec3::UnitZ();
      views.push_back(render::look_at_orthographic(3.0 * dir, Vec3::Zero(), up, 2.4, 48, 48));
      back_facing.push_back(el < 0.0);
    }
  }
  const mesh::ViewSelection sel = mesh::select_unobserved_eval_views(views, hemi);
  std::set<std::size_t> kept(sel.kept.begin(), sel.kept.end());
  long filter_wrong = 0;
  for (std::size_t i = 0; i < views.size(); ++i) filter_wrong += (kept.count(i) == 1) != back_facing[i];
  o.check(filter_wrong == 0, "view filter");

  o.detail << "self F " << self.f_score << "; translated sphere p " << pr.precision << " r " << pr.recall
           << "; bvh " << queries << " query pairs, " << mismatches << " mismatches; visibility " << classified
           << " triangles outside band, " << wrong << " wrong; filter kept " << kept.size() << "/" << views.size()
           << ", " << filter_wrong << " wrong";
}

// ---------------------------------------------------------------- 8

void ablation(Outcome& o, const fs::path& work) {
  scene::SynthOptions so;
  so.resolution = 32;
  so.n_coarse = 64;
  so.n_fine = 64;
  const scene::Scene sc = scene::synth_views(so);

  trainer::TrainConfig zero = trainer::toy_config();
  zero.iterations = 120;
  zero.weights.gamma = 0.0;
  zero.weights.gamma_n = 0.0;
  trainer::TrainConfig neus = trainer::toy_config();
  neus.iterations = 120;
  trainer::apply_ablation(neus, "neus");
  const fs::path d1 = work / "ablation_gamma0", d2 = work / "ablation_neus";
  fs::remove_all(d1);
  fs::remove_all(d2);
  const auto oracle = trainer::make_oracle(zero);
  const trainer::FitResult a = trainer::fit(zero, sc.views, oracle.get(), d1);
  const trainer::FitResult b = trainer::fit(neus, sc.views, nullptr, d2);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const auto fa = trainer::load_trained_fields(a.final_checkpoint);
  const auto fb = trainer::load_trained_fields(b.final_checkpoint);
  long sds_steps = 0;
  for (const auto& r : a.records) sds_steps += r.mode.has_value();
  const bool same_losses = slurp(d1 / "loss.csv") == slurp(d2 / "loss.csv");
  const bool same_fields = fa.sdf.params() == fb.sdf.params() && fa.radiance.params() == fb.radiance.params() &&
                           fa.s == fb.s;
  o.check(same_losses, "loss trajectories differ");
  o.check(same_fields, "fields differ");
  o.check(sds_steps > 0, "no guidance step exercised");

  std::set<std::tuple<bool, bool, bool, bool>> ladder;
  int prev = -1;
  bool monotone = true;
  for (const std::string name : {"neus-sds", "+normals", "+frozen", "+multiview"}) {
    trainer::TrainConfig c;
    trainer::apply_ablation(c, name);
    ladder.insert({c.use_sds, c.use_normals, c.use_frozen, c.use_multiview});
    const int on = c.use_normals + c.use_frozen + c.use_multiview;
    monotone &= c.use_sds && on == prev + 1;
    prev = on;
  }
  o.check(ladder.size() == 4 && monotone, "ablation ladder");
  o.detail << a.records.size() << " iterations (" << sds_steps << " guidance queries at zero weight): loss csv "
           << (same_losses ? "identical" : "different") << ", fields " << (same_fields ? "bit-identical" : "different")
           << "; " << ladder.size() << " distinct ladder configurations";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  fs::path work = fs::temp_directory_path() / "nsdf_acceptance";
  std::string level = "warn";
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--work", work, "Scratch directory for the training runs");
  app.add_option("--log-level", level, "Log level for library messages");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(level));
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    std::function<void(Outcome&)> run;
  };
  const std::vector<Criterion> all = {
      {1, "gradient correctness", gradients},
      {2, "rendering oracle", rendering},
      {3, "SDS fixed point and convergence", sds_fixed_point},
      {4, "frozen SDS", frozen},
      {5, "multi-view stop-gradient and schedule", stop_gradient},
      {6, "end-to-end toy reconstruction", [&](Outcome& o) { end_to_end(o, work); }},
      {7, "evaluation protocol", evaluation},
      {8, "ablation identity", [&](Outcome& o) { ablation(o, work); }},
  };
  int failed = 0;
  for (const Criterion& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << c.id << " " << (o.pass ? "PASS" : "FAIL") << "  " << c.name << "  ("
              << std::fixed << std::setprecision(1) << s << " s)  " << std::defaultfloat << std::setprecision(6)
              << o.detail.str() << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
