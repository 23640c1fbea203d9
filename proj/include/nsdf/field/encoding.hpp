#pragma once

#include "nsdf/common.hpp"

namespace nsdf::field {

/// Width of the lifted feature: dim * (1 + 2 * levels).
inline Eigen::Index encoded_width(Eigen::Index dim, int levels) { return dim * (1 + 2 * levels); }

/// Frequency lift of each row of `x` (N x dim): [x, sin(2^0 x), cos(2^0 x), ..., sin(2^{L-1} x), cos(2^{L-1} x)].
MatX positional_encode(const MatX& x, int levels);

/// Derivative of the encoding w.r.t. input coordinate j, stacked over j: (dim*N) x width.
/// Block j holds d encode(x) / d x_j for every row.
MatX positional_encode_tangents(const MatX& x, int levels);

}  // namespace nsdf::field
