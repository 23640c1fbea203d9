#pragma once

namespace nsdf::mesh::detail {

extern const int kEdgeTable[256];
extern const int kTriTable[256][16];

}  // namespace nsdf::mesh::detail
