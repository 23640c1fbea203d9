#include "nsdf/trainer/adam.hpp"

#include <cmath>
#include <numbers>

#include "nsdf/io/binary.hpp"

namespace nsdf::trainer {

void adam_step(VecX& params, const VecX& grads, AdamState& state, const AdamHyper& hyper, double lr) {
  require(params.size() == grads.size() && params.size() == state.m.size() && state.m.size() == state.v.size(),
          "adam_step: size mismatch");
  ++state.step;
  state.m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grads;
  state.v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + hyper.eps);
}

double learning_rate(long iteration, double base_lr, long warmup, long total, double alpha) {
  if (iteration < warmup) return base_lr * static_cast<double>(iteration) / static_cast<double>(warmup);
  const long span = total - warmup;
  const double progress = span > 0 ? std::min(1.0, static_cast<double>(iteration - warmup) / span) : 1.0;
  const double decay = 0.5 * (std::cos(std::numbers::pi * progress) + 1.0);
  return base_lr * (decay * (1.0 - alpha) + alpha);
}

void write_adam(std::ostream& os, const AdamState& s) {
  io::write_le<std::int64_t>(os, s.step);
  io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(s.m.size()));
  for (Eigen::Index i = 0; i < s.m.size(); ++i) io::write_le(os, s.m[i]);
  for (Eigen::Index i = 0; i < s.v.size(); ++i) io::write_le(os, s.v[i]);
}

AdamState read_adam(std::istream& is) {
  const auto step = io::read_le<std::int64_t>(is);
  const auto n = io::read_le<std::uint64_t>(is);
  if (n > (1ULL << 32)) throw RuntimeError("implausible optimizer state size");
  AdamState s(static_cast<Eigen::Index>(n));
  s.step = step;
  for (Eigen::Index i = 0; i < s.m.size(); ++i) s.m[i] = io::read_le<double>(is);
  for (Eigen::Index i = 0; i < s.v.size(); ++i) s.v[i] = io::read_le<double>(is);
  return s;
}

}  // namespace nsdf::trainer
