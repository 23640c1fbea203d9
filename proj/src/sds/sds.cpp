#include "nsdf/sds/sds.hpp"

#include <cmath>

#include "nsdf/sds/philox.hpp"

namespace nsdf::sds {

double sample_timestep(std::mt19937_64& rng, double t_min, double t_max) {
  require(t_min >= 0.0 && t_max <= 1.0 && t_min < t_max, "sample_timestep: need 0 <= t_min < t_max <= 1");
  std::uniform_real_distribution<double> u(t_min, t_max);
  return u(rng);
}

MatX noisy_latent(const MatX& x, double t, const MatX& eps, const DiffusionSchedule& schedule) {
  require(x.rows() == eps.rows() && x.cols() == eps.cols(), "noisy_latent: shape mismatch");
  return schedule.alpha(t) * x + schedule.sigma(t) * eps;
}

MatX cfg_combine(const MatX& eps_cond, const MatX& eps_uncond, double scale) {
  require(eps_cond.rows() == eps_uncond.rows() && eps_cond.cols() == eps_uncond.cols(), "cfg_combine: shape mismatch");
  return eps_uncond + scale * (eps_cond - eps_uncond);
}

ToyGaussianPredictor::ToyGaussianPredictor(Image mean, double cov_scale) : mean_(std::move(mean)), cov_scale_(cov_scale) {
  require(cov_scale > 0.0, "toy oracle: cov_scale must be > 0");
}

ToyGaussianPredictor::ToyGaussianPredictor(double mean_value, double cov_scale)
    : mean_value_(mean_value), cov_scale_(cov_scale) {
  require(cov_scale > 0.0, "toy oracle: cov_scale must be > 0");
}

MatX ToyGaussianPredictor::mean_for(const Image& like) const {
  if (!mean_) return MatX::Constant(like.pixel_count(), like.channels(), mean_value_);
  require(mean_->width == like.width && mean_->height == like.height && mean_->channels() == like.channels(),
          "toy oracle: request shape differs from the mean image");
  return mean_->data;
}

NoiseEstimate ToyGaussianPredictor::predict(const Image& x_t, double t, const std::string&) {
  const double a = schedule_.alpha(t);
  const double s = schedule_.sigma(t);
  const double var = a * a * cov_scale_ * cov_scale_ + s * s;
  MatX eps = (s / var) * (x_t.data - a * mean_for(x_t));
  return {eps, eps};
}

MatX sds_gradient(const Image& x, double t, const MatX& eps, NoisePredictor& predictor, const std::string& prompt,
                  double cfg_scale, const DiffusionSchedule& schedule) {
  const double w = schedule.weight(t);
  const Image xt(x.width, x.height, noisy_latent(x.data, t, eps, schedule));
  const NoiseEstimate est = predictor.predict(xt, t, prompt);
  return w * (cfg_combine(est.cond, est.uncond, cfg_scale) - eps);
}

MatX seeded_noise(std::uint64_t seed, int width, int height, int channels) {
  return philox_noise(seed, static_cast<Eigen::Index>(width) * height, channels);
}

const MatX& FrozenNoise::noise(int width, int height, int channels) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto key = std::make_tuple(width, height, channels);
  auto it = cache_.find(key);
  if (it == cache_.end()) it = cache_.emplace(key, seeded_noise(seed_, width, height, channels)).first;
  return it->second;
}

MatX frozen_sds_gradient(const Image& x, double t, FrozenNoise& frozen, NoisePredictor& predictor,
                         const std::string& prompt, double cfg_scale, const DiffusionSchedule& schedule) {
  return sds_gradient(x, t, frozen.noise(x.width, x.height, x.channels()), predictor, prompt, cfg_scale, schedule);
}

void GuidanceRequest::validate() const {
  require(image.width > 0 && image.height > 0 && image.channels() > 0, "request: empty image");
  require(image.data.allFinite(), "request: image has non-finite values");
  require(timestep >= 0.0 && timestep <= 1.0, "request: timestep outside [0, 1]");
  require(std::isfinite(cfg_scale), "request: cfg_scale must be finite");
  if (grid) {
    require(grid->rows == 2 && grid->cols == 2, "request: only 2x2 grids are supported");
    require(grid->active >= 0 && grid->active < 4, "request: active quadrant out of range");
  }
}

LocalGuidance::LocalGuidance(std::shared_ptr<NoisePredictor> predictor, std::string model_id, std::uint64_t fresh_seed)
    : predictor_(std::move(predictor)), model_id_(std::move(model_id)), fresh_(fresh_seed) {
  require(predictor_ != nullptr, "LocalGuidance: predictor required");
}

GuidanceResponse LocalGuidance::sds_gradient(const GuidanceRequest& request) {
  request.validate();
  std::lock_guard<std::mutex> lock(mutex_);
  const Image& img = request.image;
  MatX eps;
  if (request.noise_seed) {
    eps = seeded_noise(*request.noise_seed, img.width, img.height, img.channels());
  } else {
    std::normal_distribution<double> n(0.0, 1.0);
    eps.resize(img.pixel_count(), img.channels());
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps.data()[i] = n(fresh_);
  }
  GuidanceResponse r;
  r.gradient = Image(img.width, img.height,
                     sds::sds_gradient(img, request.timestep, eps, *predictor_, request.prompt, request.cfg_scale, schedule_));
  return r;
}

OracleHealth LocalGuidance::health() { return {"ok", model_id_, schedule_.hash()}; }

}  // namespace nsdf::sds
