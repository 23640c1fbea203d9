#include "nsdf/trainer/trainer.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "nsdf/field/checkpoint.hpp"
#include "nsdf/io/binary.hpp"
#include "nsdf/sds/protocol.hpp"

namespace nsdf::trainer {

namespace {

constexpr std::uint32_t kTrainerVersion = 1;

void write_string(std::ostream& os, const std::string& s) {
  io::write_le<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = io::read_le<std::uint64_t>(is);
  if (n > (1ULL << 30)) throw RuntimeError("implausible string length in checkpoint");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw RuntimeError("unexpected end of checkpoint");
  return s;
}

void write_vec(std::ostream& os, const VecX& v) {
  io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) io::write_le(os, v[i]);
}

VecX read_vec(std::istream& is) {
  const auto n = io::read_le<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw RuntimeError("implausible vector length in checkpoint");
  VecX v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = io::read_le<double>(is);
  return v;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw RuntimeError("corrupt RNG state in checkpoint");
}

std::mt19937_64 seeded(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

ad::Var s_node(ad::Tape& tape, const VecX& u, VecX* grad) {
  return ad::exp(ad::scale(tape.param(u, grad, {0, 1, 1}), 10.0));
}

bool finite(const VecX& v) { return v.allFinite(); }

}  // namespace

std::string to_string(ViewKind kind) { return kind == ViewKind::kVisible ? "visible" : "unobserved"; }

void ViewSet::validate() const {
  require(!visible.empty(), "view set: at least one visible view is required");
  for (std::size_t i = 0; i < visible.size(); ++i) {
    const VisibleView& v = visible[i];
    v.camera.validate();
    const std::string tag = "view set: visible view " + std::to_string(i);
    require(v.image.width == v.camera.width && v.image.height == v.camera.height,
            tag + ": image size differs from the camera");
    require(v.image.channels() == 3, tag + ": image must be RGB");
    require(v.mask.width == v.image.width && v.mask.height == v.image.height && v.mask.channels() == 1,
            tag + ": mask must be one channel of the image size");
  }
  for (const render::Camera& c : unobserved) c.validate();
}

Viewpoint pick_viewpoint(std::mt19937_64& rng, const ViewSet& views) {
  require(!views.visible.empty(), "pick_viewpoint: no visible views");
  std::uniform_int_distribution<std::size_t> pick(0, views.size() - 1);
  const std::size_t i = pick(rng);
  if (i < views.visible.size()) return {i, ViewKind::kVisible};
  return {i - views.visible.size(), ViewKind::kUnobserved};
}

sds::SdsMode sds_mode_scheduler(long k, bool use_normals, bool use_multiview) {
  require(k >= 0, "sds_mode_scheduler: k must be >= 0");
  if (!use_normals || k % 4 == 3) return sds::SdsMode::kColor;
  if (!use_multiview) return sds::SdsMode::kNormalSingle;
  const long non_color = k - (k + 1) / 4;  // index among the non-color steps
  return non_color % 2 == 0 ? sds::SdsMode::kNormalSingle : sds::SdsMode::kNormalMulti;
}

sds::SdsMode sds_mode_scheduler(long k, bool use_normals, bool use_multiview, Alternation alternation,
                                std::mt19937_64& rng) {
  const sds::SdsMode strict = sds_mode_scheduler(k, use_normals, use_multiview);
  if (alternation == Alternation::kStrict || strict == sds::SdsMode::kColor || !use_multiview) return strict;
  return std::bernoulli_distribution(0.5)(rng) ? sds::SdsMode::kNormalMulti : sds::SdsMode::kNormalSingle;
}

void NormalBuffer::push(Entry entry) {
  entries_.push_back(std::move(entry));
  while (entries_.size() > kCapacity) entries_.pop_front();
}

Trainer::Trainer(TrainConfig config, ViewSet views, sds::GuidanceOracle* oracle)
    : config_(std::move(config)),
      views_(std::move(views)),
      oracle_(oracle),
      sdf_(config_.sdf),
      radiance_(config_.radiance),
      u_(VecX::Constant(1, config_.s_init)),
      rng_(seeded(config_.seed, 1)),
      sds_rng_(seeded(config_.seed, 2)) {
  config_.validate();
  views_.validate();
  if (config_.use_sds) require(oracle_ != nullptr, "Trainer: guidance enabled but no oracle given");
  sdf_.init_geometric(config_.init_radius, config_.seed);
  radiance_.init_default(config_.seed + 1);
  adam_ = AdamState(sdf_.params().size() + radiance_.params().size() + 1);
}

double Trainer::s_value() const { return std::exp(10.0 * u_[0]); }

render::SamplingSpec Trainer::sampling() const {
  render::SamplingSpec s;
  s.n_coarse = config_.n_coarse;
  s.n_fine = config_.n_fine;
  s.bound_radius = config_.bound_radius;
  return s;
}

StepRecord Trainer::step() { return training_step(pick_viewpoint(rng_, views_)); }

StepRecord Trainer::training_step(const Viewpoint& vp) {
  StepRecord rec;
  rec.iteration = iteration_;
  rec.kind = vp.kind;
  rec.view = vp.index;
  rec.learning_rate = learning_rate(iteration_, config_.learning_rate, config_.warmup, config_.iterations,
                                    config_.lr_alpha);
  if (vp.kind == ViewKind::kVisible) {
    require(vp.index < views_.visible.size(), "training_step: visible index out of range");
    rec = visible_step(vp.index, rec);
  } else {
    require(vp.index < views_.unobserved.size(), "training_step: unobserved index out of range");
    rec = unobserved_step(vp.index, rec);
  }
  ++iteration_;
  return rec;
}

StepRecord Trainer::visible_step(std::size_t index, StepRecord rec) {
  const VisibleView& view = views_.visible[index];
  const render::SamplingSpec spec = sampling();

  // Detached map for the multi-view buffer, tied to the parameters of this iteration.
  buffer_.push({index, s_value(), sdf_.params(), std::nullopt});

  const int w = view.camera.width;
  const int h = view.camera.height;
  std::uniform_int_distribution<int> px(0, w - 1);
  std::uniform_int_distribution<int> py(0, h - 1);
  std::vector<std::pair<int, int>> pixels(static_cast<std::size_t>(config_.batch_rays));
  for (auto& p : pixels) {
    p.first = px(rng_);
    p.second = py(rng_);
  }
  const render::RayBundle rays = render::generate_rays(view.camera, pixels, config_.bound_radius);
  const MatX depths = render::sample_depths(sdf_, rays, spec, &rng_);

  MatX observed(config_.batch_rays, 3);
  MatX mask(config_.batch_rays, 1);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const Eigen::Index row = static_cast<Eigen::Index>(pixels[i].second) * w + pixels[i].first;
    observed.row(static_cast<Eigen::Index>(i)) = view.image.data.row(row);
    mask(static_cast<Eigen::Index>(i), 0) = view.mask.data(row, 0);
  }

  VecX g_sdf = VecX::Zero(sdf_.params().size());
  VecX g_rad = VecX::Zero(radiance_.params().size());
  VecX g_u = VecX::Zero(1);
  ad::Tape tape;
  const ad::Var s = s_node(tape, u_, &g_u);
  const render::RenderNodes nodes = render::render_rays(tape, sdf_, &radiance_, rays, depths, spec, s, &g_sdf, &g_rad);
  losses::LossParts parts;
  parts.color = losses::photometric_loss(nodes.color, observed);
  parts.mask = losses::mask_loss(nodes.opacity, mask);
  parts.eikonal = losses::eikonal_from_gradients(nodes.sample_gradient);
  try {
    rec.values = losses::total_loss(tape, parts, config_.weights, {});
  } catch (const losses::NonFiniteLoss&) {
    rec.non_finite = true;
  }
  apply_update(g_sdf, g_rad, g_u, rec);
  return rec;
}

StepRecord Trainer::unobserved_step(std::size_t index, StepRecord rec) {
  const render::SamplingSpec spec = sampling();
  const int res = config_.render_resolution;
  const render::Camera cam = views_.unobserved[index].resized(res, res);
  const render::RayBundle rays = render::generate_all_rays(cam, config_.bound_radius);
  const MatX depths = render::sample_depths(sdf_, rays, spec, &rng_);

  std::optional<sds::SdsMode> mode;
  if (config_.use_sds) {
    mode = sds_mode_scheduler(sds_iteration_, config_.use_normals, config_.use_multiview, config_.alternation,
                              sds_rng_);
  }
  ++sds_iteration_;
  const bool color = mode == sds::SdsMode::kColor;

  VecX g_sdf = VecX::Zero(sdf_.params().size());
  VecX g_rad = VecX::Zero(radiance_.params().size());
  VecX g_u = VecX::Zero(1);
  ad::Tape tape;
  const ad::Var s = s_node(tape, u_, &g_u);
  const render::RenderNodes nodes =
      render::render_rays(tape, sdf_, color ? &radiance_ : nullptr, rays, depths, spec, s, &g_sdf, &g_rad);
  losses::LossParts parts;
  parts.eikonal = losses::eikonal_from_gradients(nodes.sample_gradient);

  std::vector<losses::GradientInjection> injections;
  if (mode) {
    sds::GuidanceSettings gs;
    gs.t_min = config_.t_min;
    gs.t_max = config_.t_max;
    gs.cfg_scale = config_.cfg_scale;
    gs.oracle_resolution = config_.oracle_resolution;
    gs.use_frozen = config_.use_frozen;
    gs.frozen_seed = config_.frozen_seed;
    gs.rotate_normals = config_.rotate_normals;
    gs.active_quadrant = config_.active_quadrant;
    std::vector<render::Image> visible_maps;
    if (*mode == sds::SdsMode::kNormalMulti) visible_maps = buffer_images();
    const ad::Var node = color ? nodes.color : nodes.normal;
    const sds::GuidanceResult g =
        sds::apply_guidance(node.value(), res, res, *mode, visible_maps, gs, *oracle_, sds_rng_);
    rec.mode = g.mode;
    rec.oracle_skipped = g.skipped;
    if (!g.skipped) {
      injections.push_back(
          {node, g.gradient, color ? losses::GuidanceKind::kColor : losses::GuidanceKind::kNormal});
    }
  }
  try {
    rec.values = losses::total_loss(tape, parts, config_.weights, injections);
  } catch (const losses::NonFiniteLoss&) {
    rec.non_finite = true;
  }
  apply_update(g_sdf, g_rad, g_u, rec);
  return rec;
}

bool Trainer::apply_update(const VecX& g_sdf, const VecX& g_rad, const VecX& g_u, StepRecord& rec) {
  if (!rec.non_finite && !(finite(g_sdf) && finite(g_rad) && finite(g_u))) rec.non_finite = true;
  if (rec.non_finite) {
    ++nan_total_;
    ++nan_streak_;
    spdlog::warn("iteration {}: non-finite loss or gradient, step skipped ({} in a row)", iteration_, nan_streak_);
    if (nan_streak_ >= config_.max_nan_streak) {
      std::ostringstream os;
      os << "training aborted at iteration " << iteration_ << ": " << nan_streak_
         << " consecutive non-finite steps (last view " << to_string(rec.kind) << " #" << rec.view
         << ", s = " << s_value() << ", lr = " << rec.learning_rate << ")";
      throw RuntimeError(os.str());
    }
    return false;
  }
  nan_streak_ = 0;
  const Eigen::Index ns = sdf_.params().size();
  const Eigen::Index nr = radiance_.params().size();
  VecX params(ns + nr + 1);
  params << sdf_.params(), radiance_.params(), u_;
  VecX grads(ns + nr + 1);
  grads << g_sdf, g_rad, g_u;
  adam_step(params, grads, adam_, {config_.adam_beta1, config_.adam_beta2, config_.adam_eps}, rec.learning_rate);
  sdf_.params() = params.head(ns);
  radiance_.params() = params.segment(ns, nr);
  u_ = params.tail(1);
  return true;
}

MatX Trainer::render_buffer_map(const NormalBuffer::Entry& e) const {
  field::SdfField snapshot(config_.sdf);
  snapshot.params() = e.sdf_params;
  const int res = config_.render_resolution;
  const render::Camera cam = views_.visible[e.view].camera.resized(res, res);
  const render::RayBundle rays = render::generate_all_rays(cam, config_.bound_radius);
  return render::render(snapshot, nullptr, rays, sampling(), e.s, config_.threads).normal;
}

std::vector<render::Image> Trainer::buffer_images() {
  std::vector<render::Image> out;
  const int res = config_.render_resolution;
  for (NormalBuffer::Entry& e : buffer_.entries()) {
    if (!e.normals) e.normals = render_buffer_map(e);
    out.emplace_back(res, res, *e.normals);
  }
  return out;
}

void Trainer::write_checkpoint(std::ostream& os) const {
  io::write_magic(os, "NSTR");
  io::write_le<std::uint32_t>(os, kTrainerVersion);
  write_string(os, config_.to_text());
  io::write_le<std::int64_t>(os, iteration_);
  io::write_le<std::int64_t>(os, sds_iteration_);
  io::write_le<std::int32_t>(os, nan_streak_);
  io::write_le<std::int64_t>(os, nan_total_);
  field::write_checkpoint(os, sdf_);
  field::write_checkpoint(os, radiance_);
  write_vec(os, u_);
  write_adam(os, adam_);
  write_string(os, rng_state(rng_));
  write_string(os, rng_state(sds_rng_));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(buffer_.size()));
  for (const NormalBuffer::Entry& e : buffer_.entries()) {
    io::write_le<std::uint64_t>(os, e.view);
    io::write_le(os, e.s);
    write_vec(os, e.sdf_params);
  }
  if (!os) throw RuntimeError("checkpoint write failed");
}

std::string Trainer::checkpoint_bytes() const {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os);
  return os.str();
}

void Trainer::save(const std::filesystem::path& path) const {
  const std::string bytes = checkpoint_bytes();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeError("write failed: " + path.string());
}

namespace {

struct Header {
  TrainConfig config;
  long iteration = 0;
  long sds_iteration = 0;
  int nan_streak = 0;
  long nan_total = 0;
  field::SdfField sdf;
  field::RadianceField radiance;
};

Header read_header(std::istream& is) {
  io::expect_magic(is, "NSTR");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kTrainerVersion) throw RuntimeError("unsupported training checkpoint version " + std::to_string(version));
  TrainConfig config;
  try {
    config = parse_config(read_string(is));
  } catch (const ValidationError& e) {
    throw RuntimeError(std::string("checkpoint carries an invalid config: ") + e.what());
  }
  const auto iteration = io::read_le<std::int64_t>(is);
  const auto sds_iteration = io::read_le<std::int64_t>(is);
  const auto nan_streak = io::read_le<std::int32_t>(is);
  const auto nan_total = io::read_le<std::int64_t>(is);
  field::SdfField stored_sdf = field::read_sdf_checkpoint(is);
  field::RadianceField stored_rad = field::read_radiance_checkpoint(is);
  field::SdfField sdf(config.sdf);
  field::RadianceField rad(config.radiance);
  if (stored_sdf.params().size() != sdf.params().size() || stored_rad.params().size() != rad.params().size())
    throw RuntimeError("checkpoint fields do not match its config");
  sdf.params() = stored_sdf.params();
  rad.params() = stored_rad.params();
  return {std::move(config), iteration, sds_iteration, nan_streak, nan_total, std::move(sdf), std::move(rad)};
}

}  // namespace

Trainer Trainer::resume(std::istream& is, ViewSet views, sds::GuidanceOracle* oracle) {
  Header h = read_header(is);
  Trainer t(h.config, std::move(views), oracle);
  t.iteration_ = h.iteration;
  t.sds_iteration_ = h.sds_iteration;
  t.nan_streak_ = h.nan_streak;
  t.nan_total_ = h.nan_total;
  t.sdf_ = std::move(h.sdf);
  t.radiance_ = std::move(h.radiance);
  t.u_ = read_vec(is);
  if (t.u_.size() != 1) throw RuntimeError("checkpoint: bad sharpness parameter");
  t.adam_ = read_adam(is);
  if (t.adam_.m.size() != t.sdf_.params().size() + t.radiance_.params().size() + 1)
    throw RuntimeError("checkpoint: optimizer state size mismatch");
  set_rng_state(t.rng_, read_string(is));
  set_rng_state(t.sds_rng_, read_string(is));
  const auto n = io::read_le<std::uint32_t>(is);
  if (n > NormalBuffer::kCapacity) throw RuntimeError("checkpoint: normal buffer too large");
  for (std::uint32_t i = 0; i < n; ++i) {
    NormalBuffer::Entry e;
    e.view = io::read_le<std::uint64_t>(is);
    e.s = io::read_le<double>(is);
    e.sdf_params = read_vec(is);
    if (e.view >= t.views_.visible.size() || e.sdf_params.size() != t.sdf_.params().size())
      throw RuntimeError("checkpoint: normal buffer entry does not match the scene");
    t.buffer_.push(std::move(e));
  }
  return t;
}

Trainer Trainer::resume(const std::filesystem::path& path, ViewSet views, sds::GuidanceOracle* oracle) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open checkpoint " + path.string());
  return resume(in, std::move(views), oracle);
}

TrainedFields load_trained_fields(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("cannot open checkpoint " + path.string());
  Header h = read_header(in);
  const VecX u = read_vec(in);
  if (u.size() != 1) throw RuntimeError("checkpoint: bad sharpness parameter");
  return {std::move(h.config), std::move(h.sdf), std::move(h.radiance), std::exp(10.0 * u[0])};
}

FitResult fit(const TrainConfig& config, const ViewSet& views, sds::GuidanceOracle* oracle,
              const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume_from) {
  const auto start = std::chrono::steady_clock::now();
  std::filesystem::create_directories(out_dir);
  Trainer trainer = resume_from ? Trainer::resume(*resume_from, views, oracle) : Trainer(config, views, oracle);
  if (resume_from) {
    require(trainer.config().to_text() == config.to_text(), "fit: resume config differs from the checkpoint's");
  }
  {
    std::ofstream cfg(out_dir / "config.txt");
    cfg << trainer.config().to_text();
  }
  const std::filesystem::path csv_path = out_dir / "loss.csv";
  std::ofstream csv;
  if (resume_from && std::filesystem::exists(csv_path)) {
    csv.open(csv_path, std::ios::app);
  } else {
    csv.open(csv_path);
    losses::write_loss_csv_header(csv);
  }
  if (!csv) throw RuntimeError("cannot open " + csv_path.string());

  // Checkpoints are serialized on this thread and written by a side worker.
  std::thread writer;
  auto write_async = [&writer](std::filesystem::path path, std::string bytes) {
    if (writer.joinable()) writer.join();
    writer = std::thread([path = std::move(path), bytes = std::move(bytes)] {
      std::ofstream out(path, std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) spdlog::error("checkpoint write failed: {}", path.string());
    });
  };

  FitResult result;
  try {
    while (trainer.iteration() < config.iterations) {
      StepRecord rec = trainer.step();
      losses::write_loss_csv_row(csv, {rec.iteration, rec.values});
      if (rec.iteration % 100 == 0) {
        spdlog::info("iter {} {} L_c={:.5f} L_eik={:.5f} total={:.5f} s={:.2f}", rec.iteration, to_string(rec.kind),
                     rec.values.l_c, rec.values.l_eik, rec.values.total, trainer.s_value());
      }
      result.records.push_back(std::move(rec));
      const long done = trainer.iteration();
      if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.iterations) {
        std::ostringstream name;
        name << "ckpt_" << std::setw(7) << std::setfill('0') << done << ".bin";
        write_async(out_dir / name.str(), trainer.checkpoint_bytes());
      }
    }
  } catch (...) {
    if (writer.joinable()) writer.join();
    throw;
  }
  if (writer.joinable()) writer.join();
  result.final_checkpoint = out_dir / "final.bin";
  trainer.save(result.final_checkpoint);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::unique_ptr<sds::GuidanceOracle> make_oracle(const TrainConfig& config) {
  if (const char* url = std::getenv("NSDF_GUIDANCE_URL"); url != nullptr && *url != '\0') {
    auto remote = std::make_unique<sds::RemoteGuidance>(url, config.oracle_timeout);
    remote->verify_schedule();
    spdlog::info("guidance: remote oracle at {}", url);
    return remote;
  }
  spdlog::info("guidance: in-process toy Gaussian oracle (mean {}, scale {})", config.toy_mean, config.toy_cov_scale);
  auto toy = std::make_shared<sds::ToyGaussianPredictor>(config.toy_mean, config.toy_cov_scale);
  return std::make_unique<sds::LocalGuidance>(toy, "toy-gaussian", config.seed);
}

}  // namespace nsdf::trainer
