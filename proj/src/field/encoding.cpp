#include "nsdf/field/encoding.hpp"

#include <cmath>

namespace nsdf::field {

MatX positional_encode(const MatX& x, int levels) {
  require(levels >= 0, "positional_encode: levels must be >= 0");
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  MatX out(n, encoded_width(d, levels));
  out.leftCols(d) = x;
  for (int k = 0; k < levels; ++k) {
    const double freq = std::ldexp(1.0, k);
    const Eigen::Index base = d + 2 * d * k;
    out.middleCols(base, d) = (x * freq).array().sin();
    out.middleCols(base + d, d) = (x * freq).array().cos();
  }
  return out;
}

MatX positional_encode_tangents(const MatX& x, int levels) {
  require(levels >= 0, "positional_encode_tangents: levels must be >= 0");
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  MatX out = MatX::Zero(d * n, encoded_width(d, levels));
  for (Eigen::Index j = 0; j < d; ++j) {
    auto block = out.middleRows(j * n, n);
    block.col(j).setOnes();
    for (int k = 0; k < levels; ++k) {
      const double freq = std::ldexp(1.0, k);
      const Eigen::Index base = d + 2 * d * k;
      block.col(base + j) = freq * (x.col(j) * freq).array().cos();
      block.col(base + d + j) = -freq * (x.col(j) * freq).array().sin();
    }
  }
  return out;
}

}  // namespace nsdf::field
