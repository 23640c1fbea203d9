#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "nsdf/ad/tape.hpp"
#include "nsdf/field/sdf_field.hpp"

namespace nsdf::losses {

struct LossWeights {
  double beta = 0.1;      // mask
  double lambda = 0.1;    // Eikonal
  double gamma = 1e-5;    // color SDS
  double gamma_n = 1e-5;  // normal-map SDS
  void validate() const;
};

/// Thrown when a loss term or injected gradient is not finite. The step should be skipped.
class NonFiniteLoss : public RuntimeError {
 public:
  using RuntimeError::RuntimeError;
};

/// Mean over rays of the per-ray L1 norm of the RGB difference.
ad::Var photometric_loss(ad::Var rendered, const MatX& observed);
/// Mean binary cross-entropy of clamped opacity against the mask.
ad::Var mask_loss(ad::Var opacity, const MatX& mask, double eps = 1e-5);
/// Mean of (|g| - 1)^2 over rows of a gradient node.
ad::Var eikonal_from_gradients(ad::Var gradients);
/// Evaluates the field at `points` and returns the Eikonal penalty node.
ad::Var eikonal_loss(ad::Tape& tape, const field::SdfModel& sdf, const MatX& points, VecX* param_grad);

double photometric_loss(const MatX& rendered, const MatX& observed);
double mask_loss(const VecX& opacity, const VecX& mask, double eps = 1e-5);
double eikonal_loss(const field::SdfModel& sdf, const MatX& points);

enum class GuidanceKind { kColor, kNormal };

/// Prescribed gradient d(virtual loss)/d(node), scaled by gamma or gamma_n.
struct GradientInjection {
  ad::Var node;
  MatX gradient;
  GuidanceKind kind = GuidanceKind::kColor;
};

/// Terms that enter the scalar objective. Invalid handles are skipped.
struct LossParts {
  ad::Var color;
  ad::Var mask;
  ad::Var eikonal;
};

struct LossValues {
  double l_c = 0.0;
  double l_m = 0.0;
  double l_eik = 0.0;
  double g_sds = 0.0;    // Frobenius norm of the weighted color injection
  double g_sds_n = 0.0;  // same for normal injections
  double total = 0.0;    // L_c + beta L_m + lambda L_eik
};

/// Evaluates the scalar objective and runs one backward sweep that also carries the injections.
/// Throws NonFiniteLoss (naming the term) before touching any gradient if something is not finite.
LossValues total_loss(ad::Tape& tape, const LossParts& parts, const LossWeights& weights,
                      const std::vector<GradientInjection>& injections);

struct LossRecord {
  long iteration = 0;
  LossValues values;
};

void write_loss_csv_header(std::ostream& os);
void write_loss_csv_row(std::ostream& os, const LossRecord& record);

}  // namespace nsdf::losses
