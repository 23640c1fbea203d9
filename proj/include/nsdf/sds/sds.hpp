#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <utility>

#include "nsdf/render/image.hpp"
#include "nsdf/sds/schedule.hpp"

namespace nsdf::sds {

using render::Image;

/// Draws t ~ U(t_min, t_max). Rejects intervals outside [0, 1] or with t_min >= t_max.
double sample_timestep(std::mt19937_64& rng, double t_min = 0.0, double t_max = 0.5);

/// x_t = alpha_t x + sigma_t eps (all pixel x channel matrices of equal shape).
MatX noisy_latent(const MatX& x, double t, const MatX& eps, const DiffusionSchedule& schedule);

/// eps_uncond + scale (eps_cond - eps_uncond).
MatX cfg_combine(const MatX& eps_cond, const MatX& eps_uncond, double scale);

/// Conditional and unconditional noise estimates for a noised image.
struct NoiseEstimate {
  MatX cond;
  MatX uncond;
};

/// Stand-in for the diffusion denoiser. Implementations must be callable from one thread at a time.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual NoiseEstimate predict(const Image& x_t, double t, const std::string& prompt) = 0;
};

/// Optimal denoiser for data ~ N(mean, c^2 I): eps_hat = sigma_t (x_t - alpha_t mean) / (alpha_t^2 c^2 + sigma_t^2).
/// Both branches are identical, so guidance scale has no effect.
class ToyGaussianPredictor final : public NoisePredictor {
 public:
  /// Per-pixel mean; its resolution must match requests.
  ToyGaussianPredictor(Image mean, double cov_scale);
  /// Constant mean of any resolution.
  ToyGaussianPredictor(double mean_value, double cov_scale);
  NoiseEstimate predict(const Image& x_t, double t, const std::string& prompt) override;
  [[nodiscard]] MatX mean_for(const Image& like) const;
  [[nodiscard]] double cov_scale() const { return cov_scale_; }

 private:
  std::optional<Image> mean_;
  double mean_value_ = 0.0;
  double cov_scale_;
  DiffusionSchedule schedule_;
};

/// w(t) (eps_hat - eps) with eps_hat the CFG-combined prediction at x_t = alpha_t x + sigma_t eps.
MatX sds_gradient(const Image& x, double t, const MatX& eps, NoisePredictor& predictor, const std::string& prompt,
                  double cfg_scale, const DiffusionSchedule& schedule);

/// One fixed noise tensor per image shape, regenerated from the seed with Philox.
class FrozenNoise {
 public:
  explicit FrozenNoise(std::uint64_t seed) : seed_(seed) {}
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  /// (width*height) x channels noise for this shape; cached.
  const MatX& noise(int width, int height, int channels);

 private:
  std::uint64_t seed_;
  std::mutex mutex_;
  std::map<std::tuple<int, int, int>, MatX> cache_;
};

/// sds_gradient with eps = eps_fixed.
MatX frozen_sds_gradient(const Image& x, double t, FrozenNoise& frozen, NoisePredictor& predictor,
                         const std::string& prompt, double cfg_scale, const DiffusionSchedule& schedule);

/// Noise used for a given seed and image shape: Philox in channel-major planar order.
MatX seeded_noise(std::uint64_t seed, int width, int height, int channels);

// ---- oracle boundary ---------------------------------------------------------

struct GridLayout {
  int rows = 2;
  int cols = 2;
  int active = 0;
};

struct GuidanceRequest {
  Image image;  // values in [0, 1]
  double timestep = 0.0;
  std::string prompt;
  double cfg_scale = 100.0;
  std::optional<std::uint64_t> noise_seed;  // absent: oracle draws fresh noise
  std::optional<GridLayout> grid;
  void validate() const;
};

struct GuidanceResponse {
  Image gradient;  // w(t) (eps_hat - eps), same shape as the request image
};

struct OracleHealth {
  std::string status;
  std::string model_id;
  std::string schedule_hash;
};

/// Image-space SDS gradient provider (in-process or remote).
class GuidanceOracle {
 public:
  virtual ~GuidanceOracle() = default;
  virtual GuidanceResponse sds_gradient(const GuidanceRequest& request) = 0;
  virtual OracleHealth health() = 0;
};

/// Wraps a NoisePredictor. Seeded requests use Philox noise; unseeded ones draw from an internal stream.
class LocalGuidance final : public GuidanceOracle {
 public:
  LocalGuidance(std::shared_ptr<NoisePredictor> predictor, std::string model_id, std::uint64_t fresh_seed = 0);
  GuidanceResponse sds_gradient(const GuidanceRequest& request) override;
  OracleHealth health() override;

 private:
  std::shared_ptr<NoisePredictor> predictor_;
  std::string model_id_;
  DiffusionSchedule schedule_;
  std::mutex mutex_;
  std::mt19937_64 fresh_;
};

}  // namespace nsdf::sds
