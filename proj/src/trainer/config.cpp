#include "nsdf/trainer/config.hpp"

#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

namespace nsdf::trainer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

long to_long(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long out = 0;
  try {
    out = std::stol(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-')
    throw ValidationError("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ValidationError("config: '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<int> to_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(to_long(key, trim(item))));
  return out;
}

std::string from_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Key {
  const char* name;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define NSDF_DOUBLE(name, member)                                             \
  Key { name, [](const TrainConfig& c) { return fmt_double(c.member); },     \
        [](TrainConfig& c, const std::string& v) { c.member = to_double(name, v); } }
#define NSDF_LONG(name, member, type)                                           \
  Key { name, [](const TrainConfig& c) { return std::to_string(c.member); },   \
        [](TrainConfig& c, const std::string& v) { c.member = static_cast<type>(to_long(name, v)); } }
#define NSDF_U64(name, member)                                                \
  Key { name, [](const TrainConfig& c) { return std::to_string(c.member); }, \
        [](TrainConfig& c, const std::string& v) { c.member = to_u64(name, v); } }
#define NSDF_BOOL(name, member)                                                   \
  Key { name, [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.member = to_bool(name, v); } }
#define NSDF_INTS(name, member)                                              \
  Key { name, [](const TrainConfig& c) { return from_ints(c.member); },     \
        [](TrainConfig& c, const std::string& v) { c.member = to_ints(name, v); } }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      NSDF_LONG("iterations", iterations, long),
      NSDF_U64("seed", seed),
      NSDF_DOUBLE("learning_rate", learning_rate),
      NSDF_LONG("warmup", warmup, long),
      NSDF_DOUBLE("lr_alpha", lr_alpha),
      NSDF_DOUBLE("adam_beta1", adam_beta1),
      NSDF_DOUBLE("adam_beta2", adam_beta2),
      NSDF_DOUBLE("adam_eps", adam_eps),
      NSDF_DOUBLE("beta", weights.beta),
      NSDF_DOUBLE("lambda", weights.lambda),
      NSDF_DOUBLE("gamma", weights.gamma),
      NSDF_DOUBLE("gamma_n", weights.gamma_n),
      NSDF_BOOL("use_sds", use_sds),
      NSDF_BOOL("use_normals", use_normals),
      NSDF_BOOL("use_frozen", use_frozen),
      NSDF_BOOL("use_multiview", use_multiview),
      Key{"alternation",
          [](const TrainConfig& c) { return std::string(c.alternation == Alternation::kStrict ? "strict" : "random"); },
          [](TrainConfig& c, const std::string& v) {
            if (v == "strict") {
              c.alternation = Alternation::kStrict;
            } else if (v == "random") {
              c.alternation = Alternation::kRandom;
            } else {
              throw ValidationError("config: 'alternation' expects strict or random, got '" + v + "'");
            }
          }},
      NSDF_DOUBLE("t_min", t_min),
      NSDF_DOUBLE("t_max", t_max),
      NSDF_DOUBLE("cfg_scale", cfg_scale),
      NSDF_LONG("oracle_resolution", oracle_resolution, int),
      NSDF_LONG("active_quadrant", active_quadrant, int),
      NSDF_BOOL("rotate_normals", rotate_normals),
      NSDF_U64("frozen_seed", frozen_seed),
      NSDF_DOUBLE("toy_mean", toy_mean),
      NSDF_DOUBLE("toy_cov_scale", toy_cov_scale),
      NSDF_DOUBLE("oracle_timeout", oracle_timeout),
      NSDF_LONG("batch_rays", batch_rays, int),
      NSDF_LONG("render_resolution", render_resolution, int),
      NSDF_LONG("n_coarse", n_coarse, int),
      NSDF_LONG("n_fine", n_fine, int),
      NSDF_DOUBLE("bound_radius", bound_radius),
      NSDF_DOUBLE("init_radius", init_radius),
      NSDF_DOUBLE("s_init", s_init),
      NSDF_LONG("threads", threads, int),
      NSDF_INTS("sdf_hidden", sdf.hidden),
      NSDF_LONG("sdf_feature_dim", sdf.feature_dim, int),
      NSDF_LONG("sdf_encoding_levels", sdf.encoding_levels, int),
      NSDF_INTS("sdf_skip_layers", sdf.skip_layers),
      NSDF_DOUBLE("sdf_softplus_beta", sdf.softplus_beta),
      NSDF_INTS("radiance_hidden", radiance.hidden),
      NSDF_LONG("radiance_dir_levels", radiance.dir_encoding_levels, int),
      NSDF_LONG("checkpoint_every", checkpoint_every, long),
      NSDF_LONG("max_nan_streak", max_nan_streak, int),
  };
  return table;
}

#undef NSDF_DOUBLE
#undef NSDF_LONG
#undef NSDF_U64
#undef NSDF_BOOL
#undef NSDF_INTS

}  // namespace

void TrainConfig::validate() const {
  require(iterations > 0, "config: iterations must be > 0");
  require(learning_rate > 0.0, "config: learning_rate must be > 0");
  require(warmup >= 0, "config: warmup must be >= 0");
  require(lr_alpha >= 0.0 && lr_alpha <= 1.0, "config: lr_alpha must lie in [0, 1]");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "config: adam_beta1 must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "config: adam_beta2 must lie in [0, 1)");
  require(adam_eps > 0.0, "config: adam_eps must be > 0");
  weights.validate();
  require(t_min >= 0.0 && t_min < t_max && t_max <= 1.0, "config: need 0 <= t_min < t_max <= 1");
  require(cfg_scale >= 0.0, "config: cfg_scale must be >= 0");
  require(oracle_resolution >= 8, "config: oracle_resolution must be >= 8");
  require(active_quadrant >= 0 && active_quadrant < 4, "config: active_quadrant must be 0..3");
  require(toy_cov_scale > 0.0, "config: toy_cov_scale must be > 0");
  require(oracle_timeout > 0.0, "config: oracle_timeout must be > 0");
  require(batch_rays > 0, "config: batch_rays must be > 0");
  require(render_resolution >= 4, "config: render_resolution must be >= 4");
  require(n_coarse >= 2 && n_fine >= 0, "config: need n_coarse >= 2 and n_fine >= 0");
  require(bound_radius > 0.0, "config: bound_radius must be > 0");
  require(init_radius > 0.0 && init_radius < bound_radius, "config: need 0 < init_radius < bound_radius");
  require(threads >= 1, "config: threads must be >= 1");
  require(sdf.feature_dim == radiance.feature_dim, "config: SDF and radiance feature widths differ");
  require(checkpoint_every >= 0, "config: checkpoint_every must be >= 0");
  require(max_nan_streak >= 1, "config: max_nan_streak must be >= 1");
  field::SdfField probe_sdf(sdf);
  field::RadianceField probe_rad(radiance);
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  for (const Key& k : keys()) os << k.name << " = " << k.get(*this) << '\n';
  return os.str();
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    bool found = false;
    for (const Key& k : keys()) {
      if (key == k.name) {
        k.set(base, value);
        found = true;
        break;
      }
    }
    if (!found) throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  base.radiance.feature_dim = base.sdf.feature_dim;
  base.validate();
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

TrainConfig toy_config() {
  TrainConfig c;
  c.batch_rays = 64;
  c.n_coarse = 16;
  c.n_fine = 8;
  c.sdf.encoding_levels = 4;
  c.render_resolution = 12;
  c.oracle_resolution = 64;
  return c;
}

std::vector<std::string> ablation_names() { return {"neus", "neus-sds", "+normals", "+frozen", "+multiview"}; }

void apply_ablation(TrainConfig& c, const std::string& name) {
  if (name == "neus") {
    c.use_sds = false;
    c.use_normals = c.use_frozen = c.use_multiview = false;
    c.weights.gamma = c.weights.gamma_n = 0.0;
  } else if (name == "neus-sds") {
    c.use_sds = true;
    c.use_normals = c.use_frozen = c.use_multiview = false;
  } else if (name == "+normals") {
    c.use_sds = c.use_normals = true;
    c.use_frozen = c.use_multiview = false;
  } else if (name == "+frozen") {
    c.use_sds = c.use_normals = c.use_frozen = true;
    c.use_multiview = false;
  } else if (name == "+multiview") {
    c.use_sds = c.use_normals = c.use_frozen = c.use_multiview = true;
  } else {
    throw ValidationError("unknown ablation '" + name + "' (expected neus, neus-sds, +normals, +frozen, +multiview)");
  }
}

}  // namespace nsdf::trainer
