#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nsdf/common.hpp"
#include "nsdf/field/radiance_field.hpp"
#include "nsdf/field/sdf_field.hpp"
#include "nsdf/losses/losses.hpp"

namespace nsdf::trainer {

enum class Alternation { kStrict, kRandom };

/// Every knob of a training run. Text form: one `key = value` per line, `#` comments.
struct TrainConfig {
  long iterations = 2000;
  std::uint64_t seed = 0;

  // optimizer
  double learning_rate = 5e-4;
  long warmup = 500;
  double lr_alpha = 0.05;  // final fraction of the learning rate after cosine decay
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  losses::LossWeights weights;

  // guidance
  bool use_sds = true;
  bool use_normals = true;
  bool use_frozen = true;
  bool use_multiview = true;
  Alternation alternation = Alternation::kStrict;
  double t_min = 0.0;
  double t_max = 0.5;
  double cfg_scale = 100.0;
  int oracle_resolution = 512;
  int active_quadrant = 0;
  bool rotate_normals = true;
  std::uint64_t frozen_seed = 0;
  double toy_mean = 0.5;
  double toy_cov_scale = 0.5;
  double oracle_timeout = 60.0;

  // rendering
  int batch_rays = 512;
  int render_resolution = 64;  // side of the full maps used for guidance and the normal buffer
  int n_coarse = 64;
  int n_fine = 64;
  double bound_radius = 1.0;
  double init_radius = 0.5;
  double s_init = 0.3;  // s = exp(10 u)
  int threads = 1;

  // networks
  field::SdfFieldSpec sdf;
  field::RadianceFieldSpec radiance;

  // bookkeeping
  long checkpoint_every = 0;  // 0: final checkpoint only
  int max_nan_streak = 3;

  void validate() const;
  /// Canonical text form; parse_config(to_text()) reproduces the config.
  [[nodiscard]] std::string to_text() const;
};

TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// Configuration of the desk-scale reproduction runs: small batches, few samples, low-res guidance maps.
TrainConfig toy_config();

/// Ablation ladder names: neus, neus-sds, +normals, +frozen, +multiview.
std::vector<std::string> ablation_names();
/// Sets the guidance flags for a rung of the ladder. Unknown name: ValidationError.
void apply_ablation(TrainConfig& config, const std::string& name);

}  // namespace nsdf::trainer
