#include "nsdf/sds/schedule.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "nsdf/common.hpp"

namespace nsdf::sds {

DiffusionSchedule::DiffusionSchedule() : betas_(kSteps), log_cumprod_(kSteps + 1) {
  const double a = std::sqrt(kBetaStart);
  const double b = std::sqrt(kBetaEnd);
  for (int i = 0; i < kSteps; ++i) {
    const double s = a + (b - a) * i / (kSteps - 1);
    betas_[static_cast<std::size_t>(i)] = s * s;
  }
  log_cumprod_[0] = 0.0;
  for (int i = 0; i < kSteps; ++i)
    log_cumprod_[static_cast<std::size_t>(i + 1)] =
        log_cumprod_[static_cast<std::size_t>(i)] + std::log1p(-betas_[static_cast<std::size_t>(i)]);
}

double DiffusionSchedule::alpha_bar(double t) const {
  require(t >= 0.0 && t <= 1.0, "schedule: t must lie in [0, 1]");
  const double x = t * kSteps;
  const int k = std::min(static_cast<int>(std::floor(x)), kSteps);
  const double frac = x - k;
  double lc = log_cumprod_[static_cast<std::size_t>(k)];
  if (k < kSteps) lc += frac * std::log1p(-betas_[static_cast<std::size_t>(k)]);
  return std::exp(lc);
}

double DiffusionSchedule::alpha(double t) const { return std::sqrt(alpha_bar(t)); }
double DiffusionSchedule::sigma(double t) const { return std::sqrt(1.0 - alpha_bar(t)); }
double DiffusionSchedule::weight(double t) const { return 1.0 - alpha_bar(t); }

std::string DiffusionSchedule::constants_string() const {
  std::ostringstream os;
  os << "vp;betas=scaled_linear;beta_start=0.00085;beta_end=0.012;steps=" << kSteps
     << ";t_map=geometric_interp_k_eq_floor_tT;alpha=sqrt(alpha_bar);sigma=sqrt(1-alpha_bar);w=sigma^2";
  return os.str();
}

std::string DiffusionSchedule::hash() const {
  const std::string text = constants_string();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw RuntimeError("sha256 failed");
  std::string hex = "sha256:";
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

const std::string& schedule_hash() {
  static const std::string h = DiffusionSchedule().hash();
  return h;
}

}  // namespace nsdf::sds
