#pragma once

#include <cstdint>
#include <iosfwd>

#include "nsdf/common.hpp"

namespace nsdf::trainer {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  VecX m;
  VecX v;
  std::int64_t step = 0;

  explicit AdamState(Eigen::Index n = 0) : m(VecX::Zero(n)), v(VecX::Zero(n)) {}
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(VecX& params, const VecX& grads, AdamState& state, const AdamHyper& hyper, double lr);

/// Linear warmup over `warmup` iterations, then cosine decay to `alpha * base_lr` at `total`.
double learning_rate(long iteration, double base_lr, long warmup, long total, double alpha);

void write_adam(std::ostream& os, const AdamState& state);
AdamState read_adam(std::istream& is);

}  // namespace nsdf::trainer
