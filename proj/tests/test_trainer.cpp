#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "nsdf/scene/scene.hpp"
#include "nsdf/trainer/trainer.hpp"

using namespace nsdf;
using namespace nsdf::trainer;
using sds::SdsMode;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.iterations = 12;
  c.warmup = 4;
  c.learning_rate = 1e-3;
  c.batch_rays = 16;
  c.n_coarse = 8;
  c.n_fine = 4;
  c.render_resolution = 8;
  c.oracle_resolution = 16;
  c.sdf.hidden = {16, 16};
  c.sdf.feature_dim = 4;
  c.sdf.encoding_levels = 2;
  c.radiance.hidden = {16};
  c.radiance.feature_dim = 4;
  c.radiance.dir_encoding_levels = 2;
  return c;
}

const ViewSet& tiny_views() {
  static const ViewSet views = [] {
    scene::SynthOptions o;
    o.resolution = 16;
    o.n_visible = 4;
    o.n_unobserved = 2;
    o.n_coarse = 32;
    o.n_fine = 32;
    return scene::synth_views(o).views;
  }();
  return views;
}

ViewSet placeholder_views(std::size_t nv, std::size_t nu) {
  ViewSet v;
  v.visible.resize(nv);
  v.unobserved.resize(nu);
  return v;
}

class ConstantOracle final : public sds::GuidanceOracle {
 public:
  explicit ConstantOracle(double value) : value_(value) {}
  sds::GuidanceResponse sds_gradient(const sds::GuidanceRequest& r) override {
    ++calls;
    last_prompt = r.prompt;
    last_grid = r.grid.has_value();
    return {render::Image(r.image.width, r.image.height, MatX::Constant(r.image.data.rows(), 3, value_))};
  }
  sds::OracleHealth health() override { return {"ok", "constant", sds::schedule_hash()}; }
  int calls = 0;
  std::string last_prompt;
  bool last_grid = false;

 private:
  double value_;
};

std::unique_ptr<sds::GuidanceOracle> toy_oracle(const TrainConfig& c) {
  auto p = std::make_shared<sds::ToyGaussianPredictor>(c.toy_mean, c.toy_cov_scale);
  return std::make_unique<sds::LocalGuidance>(p, "toy", c.seed);
}

VecX all_params(const Trainer& t) {
  VecX out(t.sdf().params().size() + t.radiance().params().size());
  out << t.sdf().params(), t.radiance().params();
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("nsdf_trainer_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("pick_viewpoint is uniform over the concatenated list") {
  const ViewSet views = placeholder_views(5, 5);
  std::mt19937_64 rng(7);
  std::map<std::pair<int, std::size_t>, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Viewpoint vp = pick_viewpoint(rng, views);
    CHECK(vp.index < 5);
    ++counts[{vp.kind == ViewKind::kVisible ? 0 : 1, vp.index}];
  }
  REQUIRE(counts.size() == 10);
  for (const auto& [key, c] : counts) CHECK(std::abs(c / double(n) - 0.1) < 0.01);
}

TEST_CASE("pick_viewpoint without unobserved views and under a fixed seed") {
  const ViewSet only = placeholder_views(3, 0);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) CHECK(pick_viewpoint(rng, only).kind == ViewKind::kVisible);

  const ViewSet views = placeholder_views(2, 3);
  std::mt19937_64 a(99), b(99);
  for (int i = 0; i < 200; ++i) {
    const Viewpoint x = pick_viewpoint(a, views);
    const Viewpoint y = pick_viewpoint(b, views);
    CHECK(x.index == y.index);
    CHECK(x.kind == y.kind);
  }
  CHECK_THROWS_AS(pick_viewpoint(a, placeholder_views(0, 2)), ValidationError);
}

TEST_CASE("scheduler enumerates the documented sequence") {
  const std::vector<SdsMode> expected = {SdsMode::kNormalSingle, SdsMode::kNormalMulti, SdsMode::kNormalSingle,
                                         SdsMode::kColor,        SdsMode::kNormalMulti, SdsMode::kNormalSingle,
                                         SdsMode::kNormalMulti,  SdsMode::kColor};
  for (long k = 0; k < 8; ++k) CHECK(sds_mode_scheduler(k, true, true) == expected[static_cast<std::size_t>(k)]);
  CHECK_THROWS_AS(sds_mode_scheduler(-1, true, true), ValidationError);
}

TEST_CASE("scheduler periodicity and flag properties") {
  for (int flags = 0; flags < 4; ++flags) {
    const bool normals = flags & 1;
    const bool multi = flags & 2;
    for (long start = 0; start < 400; start += 4) {
      int colors = 0;
      for (long k = start; k < start + 4; ++k) {
        const SdsMode m = sds_mode_scheduler(k, normals, multi);
        if (m == SdsMode::kColor) ++colors;
        if (!multi) CHECK(m != SdsMode::kNormalMulti);
        if (!normals) CHECK(m == SdsMode::kColor);
      }
      if (normals) CHECK(colors == 1);
    }
  }
  // Modes within a period repeat every two periods (single/multi phase flips with the 3 non-color slots).
  for (long k = 0; k < 400; ++k) CHECK(sds_mode_scheduler(k, true, true) == sds_mode_scheduler(k + 8, true, true));
  for (long k = 0; k < 400; ++k) {
    CHECK((sds_mode_scheduler(k, true, true) == SdsMode::kColor) ==
          (sds_mode_scheduler(k + 4, true, true) == SdsMode::kColor));
  }
  // Strict alternation among non-color steps.
  std::vector<SdsMode> non_color;
  for (long k = 0; k < 400; ++k)
    if (sds_mode_scheduler(k, true, true) != SdsMode::kColor) non_color.push_back(sds_mode_scheduler(k, true, true));
  for (std::size_t i = 0; i < non_color.size(); ++i)
    CHECK(non_color[i] == (i % 2 == 0 ? SdsMode::kNormalSingle : SdsMode::kNormalMulti));
}

TEST_CASE("random alternation keeps the color slots and flips a fair coin") {
  std::mt19937_64 rng(3);
  int multi = 0;
  int non_color = 0;
  for (long k = 0; k < 8000; ++k) {
    const SdsMode m = sds_mode_scheduler(k, true, true, Alternation::kRandom, rng);
    CHECK((m == SdsMode::kColor) == (k % 4 == 3));
    if (m != SdsMode::kColor) {
      ++non_color;
      multi += m == SdsMode::kNormalMulti;
    }
  }
  CHECK(std::abs(multi / double(non_color) - 0.5) < 0.02);
  std::mt19937_64 r2(3);
  for (long k = 0; k < 100; ++k)
    CHECK(sds_mode_scheduler(k, true, false, Alternation::kRandom, r2) == sds_mode_scheduler(k, true, false));
}

TEST_CASE("adam matches a hand-stepped trace") {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.1;
  const std::vector<double> grads = {0.5, -2.0, 0.25};
  VecX p(2);
  p << 1.0, -3.0;
  AdamState st(2);
  double x0 = 1.0, x1 = -3.0, m0 = 0, v0 = 0, m1 = 0, v1 = 0;
  for (int t = 1; t <= 3; ++t) {
    const double g0 = grads[static_cast<std::size_t>(t - 1)];
    const double g1 = -0.5 * g0 + 1.0;
    VecX g(2);
    g << g0, g1;
    adam_step(p, g, st, {b1, b2, eps}, lr);
    m0 = b1 * m0 + (1 - b1) * g0;
    v0 = b2 * v0 + (1 - b2) * g0 * g0;
    m1 = b1 * m1 + (1 - b1) * g1;
    v1 = b2 * v1 + (1 - b2) * g1 * g1;
    const double c1 = 1 - std::pow(b1, t), c2 = 1 - std::pow(b2, t);
    x0 -= lr * (m0 / c1) / (std::sqrt(v0 / c2) + eps);
    x1 -= lr * (m1 / c1) / (std::sqrt(v1 / c2) + eps);
    CHECK(p[0] == doctest::Approx(x0).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(x1).epsilon(1e-14));
  }
  CHECK(st.step == 3);
  // First step moves each coordinate by exactly lr against the gradient sign.
  VecX q = VecX::Zero(1);
  AdamState s1(1);
  adam_step(q, VecX::Constant(1, 42.0), s1, {}, 0.01);
  CHECK(q[0] == doctest::Approx(-0.01).epsilon(1e-9));
  CHECK_THROWS_AS(adam_step(q, VecX::Zero(2), s1, {}, 0.01), ValidationError);
}

TEST_CASE("adam converges on a one-dimensional bowl") {
  const double target = 3.0;
  VecX x = VecX::Constant(1, -1.0);
  AdamState st(1);
  const long total = 5000;
  for (long it = 0; it < total; ++it) {
    const VecX g = VecX::Constant(1, 2.0 * (x[0] - target));
    adam_step(x, g, st, {}, learning_rate(it, 0.1, 0, total, 0.0));
  }
  CHECK(std::abs(x[0] - target) < 1e-6);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  VecX p(3);
  p << 0.1, -0.2, 0.3;
  const VecX before = p;
  AdamState st(3);
  const double lr = learning_rate(600, 5e-4, 500, 2000, 0.05);
  CHECK(lr > 0.0);
  for (int i = 0; i < 5; ++i) adam_step(p, VecX::Zero(3), st, {}, lr);
  CHECK(p == before);
}

TEST_CASE("learning rate warmup and cosine decay") {
  CHECK(learning_rate(0, 5e-4, 500, 2000, 0.05) == 0.0);
  CHECK(learning_rate(250, 5e-4, 500, 2000, 0.05) == doctest::Approx(2.5e-4));
  CHECK(learning_rate(500, 5e-4, 500, 2000, 0.05) == doctest::Approx(5e-4));
  CHECK(learning_rate(1250, 5e-4, 500, 2000, 0.05) == doctest::Approx(5e-4 * (0.5 * 0.95 + 0.05)));
  CHECK(learning_rate(2000, 5e-4, 500, 2000, 0.05) == doctest::Approx(2.5e-5));
  CHECK(learning_rate(5000, 5e-4, 500, 2000, 0.05) == doctest::Approx(2.5e-5));
  double prev = learning_rate(500, 5e-4, 500, 2000, 0.05);
  for (long it = 501; it <= 2000; ++it) {
    const double lr = learning_rate(it, 5e-4, 500, 2000, 0.05);
    CHECK(lr <= prev);
    prev = lr;
  }
  CHECK(learning_rate(0, 1e-3, 0, 10, 0.0) == doctest::Approx(1e-3));
}

TEST_CASE("normal buffer keeps the last three entries") {
  NormalBuffer b;
  for (std::size_t i = 0; i < 5; ++i) b.push({i, 1.0, VecX::Constant(2, double(i)), std::nullopt});
  REQUIRE(b.size() == 3);
  CHECK(b.entries()[0].view == 2);
  CHECK(b.entries()[1].view == 3);
  CHECK(b.entries()[2].view == 4);
  b.clear();
  CHECK(b.size() == 0);
}

TEST_CASE("trainer buffers detached snapshots of visible iterations") {
  TrainConfig c = tiny_config();
  c.use_sds = false;
  Trainer t(c, tiny_views(), nullptr);
  std::vector<VecX> before;
  for (std::size_t v : {0, 1, 2, 3, 1}) {
    before.push_back(t.sdf().params());
    const StepRecord r = t.training_step({v, ViewKind::kVisible});
    CHECK_FALSE(r.non_finite);
  }
  const auto& e = t.normal_buffer().entries();
  REQUIRE(e.size() == 3);
  CHECK(e[0].view == 2);
  CHECK(e[1].view == 3);
  CHECK(e[2].view == 1);
  // Each entry holds the parameters of its own iteration, not the live ones.
  CHECK(e[0].sdf_params == before[2]);
  CHECK(e[2].sdf_params == before[4]);
  CHECK(e[2].sdf_params != t.sdf().params());

  // The maps come from the snapshot alone.
  field::SdfField snap(c.sdf);
  snap.params() = e[2].sdf_params;
  const render::Camera cam = tiny_views().visible[1].camera.resized(8, 8);
  const MatX direct =
      render::render(snap, nullptr, render::generate_all_rays(cam, c.bound_radius), t.sampling(), e[2].s, 1).normal;
  const VecX live = t.sdf().params();
  const std::vector<render::Image> maps = t.buffer_images();
  REQUIRE(maps.size() == 3);
  CHECK((maps[2].data - direct).cwiseAbs().maxCoeff() == 0.0);
  CHECK(t.sdf().params() == live);
}

TEST_CASE("multi-view steps send a grid built from the buffer") {
  TrainConfig c = tiny_config();
  ConstantOracle oracle(0.0);
  Trainer t(c, tiny_views(), &oracle);
  for (std::size_t v = 0; v < 3; ++v) t.training_step({v, ViewKind::kVisible});
  StepRecord r0 = t.training_step({0, ViewKind::kUnobserved});
  CHECK(r0.mode == SdsMode::kNormalSingle);
  CHECK_FALSE(oracle.last_grid);
  StepRecord r1 = t.training_step({1, ViewKind::kUnobserved});
  CHECK(r1.mode == SdsMode::kNormalMulti);
  CHECK(oracle.last_grid);
  CHECK(oracle.calls == 2);
  CHECK(t.sds_iteration() == 2);
}

TEST_CASE("zero oracle gradient gives the Eikonal-only update") {
  TrainConfig with = tiny_config();
  TrainConfig without = with;
  without.use_sds = false;
  ConstantOracle zero(0.0);
  Trainer a(with, tiny_views(), &zero);
  Trainer b(without, tiny_views(), nullptr);
  for (std::size_t i = 0; i < 2; ++i) {
    a.training_step({0, ViewKind::kVisible});
    b.training_step({0, ViewKind::kVisible});
  }
  const VecX start = all_params(a);
  REQUIRE(start == all_params(b));
  const StepRecord ra = a.training_step({1, ViewKind::kUnobserved});
  const StepRecord rb = b.training_step({1, ViewKind::kUnobserved});
  CHECK(ra.mode == SdsMode::kNormalSingle);
  CHECK_FALSE(rb.mode.has_value());
  CHECK(zero.calls == 1);
  CHECK(ra.values.l_eik == rb.values.l_eik);
  CHECK(ra.values.g_sds_n == 0.0);
  const VecX da = all_params(a) - start;
  const VecX db = all_params(b) - start;
  CHECK(da.cwiseAbs().maxCoeff() > 0.0);
  CHECK((da - db).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.s_value() == b.s_value());
}

TEST_CASE("non-finite steps are skipped and three in a row abort") {
  TrainConfig c = tiny_config();
  c.use_multiview = false;
  ConstantOracle bad(std::nan(""));
  Trainer t(c, tiny_views(), &bad);
  const VecX start = all_params(t);
  const StepRecord r0 = t.training_step({0, ViewKind::kUnobserved});
  CHECK(r0.non_finite);
  CHECK(t.nan_streak() == 1);
  CHECK(all_params(t) == start);
  t.training_step({0, ViewKind::kVisible});
  CHECK(t.nan_streak() == 0);
  CHECK(t.nan_total() == 1);
  t.training_step({0, ViewKind::kUnobserved});
  t.training_step({1, ViewKind::kUnobserved});
  CHECK(t.nan_streak() == 2);
  try {
    t.training_step({0, ViewKind::kUnobserved});
    FAIL("expected an abort");
  } catch (const RuntimeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("iteration 4") != std::string::npos);
    CHECK(msg.find("3 consecutive") != std::string::npos);
  }
}

TEST_CASE("guidance without an oracle is rejected") {
  CHECK_THROWS_AS(Trainer(tiny_config(), tiny_views(), nullptr), ValidationError);
  ViewSet empty;
  TrainConfig c = tiny_config();
  c.use_sds = false;
  CHECK_THROWS_AS(Trainer(c, empty, nullptr), ValidationError);
}

TEST_CASE("resume reproduces the remaining trajectory") {
  TrainConfig c = tiny_config();
  auto o1 = toy_oracle(c);
  Trainer full(c, tiny_views(), o1.get());
  std::string mid;
  std::vector<StepRecord> tail;
  for (int i = 0; i < 10; ++i) {
    if (i == 5) mid = full.checkpoint_bytes();
    StepRecord r = full.step();
    if (i >= 5) tail.push_back(r);
  }
  auto o2 = toy_oracle(c);
  std::istringstream is(mid);
  Trainer resumed = Trainer::resume(is, tiny_views(), o2.get());
  CHECK(resumed.iteration() == 5);
  for (const StepRecord& want : tail) {
    const StepRecord got = resumed.step();
    CHECK(got.iteration == want.iteration);
    CHECK(got.kind == want.kind);
    CHECK(got.view == want.view);
    CHECK(got.values.total == want.values.total);
    CHECK(got.values.l_c == want.values.l_c);
  }
  CHECK(resumed.checkpoint_bytes() == full.checkpoint_bytes());
}

TEST_CASE("corrupt checkpoints are runtime errors") {
  TrainConfig c = tiny_config();
  c.use_sds = false;
  Trainer t(c, tiny_views(), nullptr);
  const std::string bytes = t.checkpoint_bytes();
  std::istringstream cut(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(Trainer::resume(cut, tiny_views(), nullptr), RuntimeError);
  std::string wrong = bytes;
  wrong[0] = 'X';
  std::istringstream bad(wrong);
  CHECK_THROWS_AS(Trainer::resume(bad, tiny_views(), nullptr), RuntimeError);
}

TEST_CASE("same seed gives identical checkpoint bytes") {
  TrainConfig c = tiny_config();
  c.checkpoint_every = 5;
  const auto d1 = scratch("seed_a");
  const auto d2 = scratch("seed_b");
  const auto d3 = scratch("seed_c");
  auto o1 = toy_oracle(c);
  auto o2 = toy_oracle(c);
  const FitResult f1 = fit(c, tiny_views(), o1.get(), d1);
  const FitResult f2 = fit(c, tiny_views(), o2.get(), d2);
  CHECK(f1.records.size() == 12);
  CHECK(slurp(d1 / "final.bin") == slurp(d2 / "final.bin"));
  CHECK(slurp(d1 / "loss.csv") == slurp(d2 / "loss.csv"));
  CHECK(slurp(d1 / "ckpt_0000005.bin") == slurp(d2 / "ckpt_0000005.bin"));
  CHECK(std::filesystem::exists(d1 / "ckpt_0000010.bin"));
  CHECK(std::filesystem::exists(d1 / "config.txt"));

  TrainConfig other = c;
  other.seed = 1;
  auto o3 = toy_oracle(other);
  fit(other, tiny_views(), o3.get(), d3);
  CHECK(slurp(d1 / "final.bin") != slurp(d3 / "final.bin"));

  const TrainedFields tf = load_trained_fields(d1 / "final.bin");
  CHECK(tf.config.to_text() == c.to_text());
  CHECK(tf.s > 0.0);
  for (const auto& d : {d1, d2, d3}) std::filesystem::remove_all(d);
}

TEST_CASE("fit resumes from a cadence checkpoint") {
  TrainConfig c = tiny_config();
  c.checkpoint_every = 6;
  const auto d1 = scratch("resume_a");
  const auto d2 = scratch("resume_b");
  auto o1 = toy_oracle(c);
  fit(c, tiny_views(), o1.get(), d1);
  std::filesystem::create_directories(d2);
  auto o2 = toy_oracle(c);
  const FitResult r = fit(c, tiny_views(), o2.get(), d2, d1 / "ckpt_0000006.bin");
  CHECK(r.records.size() == 6);
  CHECK(r.records.front().iteration == 6);
  CHECK(slurp(d1 / "final.bin") == slurp(d2 / "final.bin"));
  TrainConfig changed = c;
  changed.learning_rate = 2e-3;
  CHECK_THROWS_AS(fit(changed, tiny_views(), o2.get(), d2, d1 / "ckpt_0000006.bin"), ValidationError);
  for (const auto& d : {d1, d2}) std::filesystem::remove_all(d);
}

TEST_CASE("zero guidance weights match the plain reconstruction run") {
  TrainConfig zero = tiny_config();
  zero.weights.gamma = 0.0;
  zero.weights.gamma_n = 0.0;
  TrainConfig neus = tiny_config();
  apply_ablation(neus, "neus");
  const auto d1 = scratch("gamma0");
  const auto d2 = scratch("neus");
  auto o = toy_oracle(zero);
  const FitResult a = fit(zero, tiny_views(), o.get(), d1);
  const FitResult b = fit(neus, tiny_views(), nullptr, d2);
  CHECK(slurp(d1 / "loss.csv") == slurp(d2 / "loss.csv"));
  const TrainedFields fa = load_trained_fields(d1 / "final.bin");
  const TrainedFields fb = load_trained_fields(d2 / "final.bin");
  CHECK(fa.sdf.params() == fb.sdf.params());
  CHECK(fa.radiance.params() == fb.radiance.params());
  bool saw_unobserved = false;
  for (const StepRecord& r : a.records) saw_unobserved |= r.kind == ViewKind::kUnobserved;
  CHECK(saw_unobserved);
  for (const auto& d : {d1, d2}) std::filesystem::remove_all(d);
}

TEST_CASE("ablation ladder gives distinct configurations") {
  std::set<std::tuple<bool, bool, bool, bool>> seen;
  const std::vector<std::string> ladder = {"neus-sds", "+normals", "+frozen", "+multiview"};
  int prev_on = 0;
  for (const std::string& name : ladder) {
    TrainConfig c;
    apply_ablation(c, name);
    CHECK(c.use_sds);
    seen.insert({c.use_sds, c.use_normals, c.use_frozen, c.use_multiview});
    const int on = c.use_normals + c.use_frozen + c.use_multiview;
    CHECK(on == prev_on + (name == "neus-sds" ? 0 : 1));
    prev_on = on;
    CHECK_NOTHROW(c.validate());
  }
  CHECK(seen.size() == 4);
  TrainConfig n;
  apply_ablation(n, "neus");
  CHECK_FALSE(n.use_sds);
  CHECK(ablation_names().size() == 5);
  CHECK_THROWS_AS(apply_ablation(n, "+everything"), ValidationError);
}

TEST_CASE("config text round trip and errors") {
  TrainConfig c = tiny_config();
  c.alternation = Alternation::kRandom;
  c.sdf.skip_layers = {1};
  c.seed = 12345678901234ULL;
  const TrainConfig back = parse_config(c.to_text());
  CHECK(back.to_text() == c.to_text());
  CHECK(back.sdf.hidden == c.sdf.hidden);
  CHECK(back.alternation == Alternation::kRandom);

  const TrainConfig partial = parse_config("# comment\n\niterations = 7   # trailing\nuse_frozen = off\n");
  CHECK(partial.iterations == 7);
  CHECK_FALSE(partial.use_frozen);
  CHECK(partial.learning_rate == TrainConfig{}.learning_rate);

  CHECK_THROWS_AS(parse_config("iterations = 0\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("iterations = ten\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("use_sds = maybe\n"), ValidationError);
  CHECK_THROWS_AS(parse_config("t_min = 0.6\n"), ValidationError);
  try {
    parse_config("seed = 1\nno_such_key = 3\n");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(load_config("/nonexistent/config.txt"), ValidationError);
}
