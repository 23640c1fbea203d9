#pragma once

#include <string>
#include <vector>

namespace nsdf::sds {

/// Variance-preserving schedule on continuous t in [0, 1].
///
/// Betas follow the Stable Diffusion "scaled_linear" table (sqrt-linear from 8.5e-4 to 1.2e-2 over
/// 1000 steps). The cumulative product is interpolated geometrically between steps:
/// alpha_bar(t) = prod_{i<k} (1 - beta_i) * (1 - beta_k)^frac with t*T = k + frac, so alpha_bar(0) = 1.
class DiffusionSchedule {
 public:
  static constexpr int kSteps = 1000;
  static constexpr double kBetaStart = 0.00085;
  static constexpr double kBetaEnd = 0.012;

  DiffusionSchedule();

  [[nodiscard]] double alpha_bar(double t) const;
  [[nodiscard]] double alpha(double t) const;
  [[nodiscard]] double sigma(double t) const;
  /// SDS weighting w(t) = sigma_t^2.
  [[nodiscard]] double weight(double t) const;

  /// Canonical text of every constant that defines alpha/sigma/w.
  [[nodiscard]] std::string constants_string() const;
  /// "sha256:<hex>" of constants_string(); remote oracles must report the same value.
  [[nodiscard]] std::string hash() const;

 private:
  std::vector<double> betas_;
  std::vector<double> log_cumprod_;  // log prod_{i<k} (1 - beta_i), k = 0..T
};

/// Published value of DiffusionSchedule().hash().
const std::string& schedule_hash();

}  // namespace nsdf::sds
