#pragma once

#include <filesystem>
#include <iosfwd>

#include "nsdf/field/radiance_field.hpp"
#include "nsdf/field/sdf_field.hpp"

namespace nsdf::field {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian):
//   "NSDF" | u32 version | u32 kind (0 sdf, 1 radiance) | u32 n | u32 layer widths[n]
//   | u32 encoding levels | u32 n_skip | u32 skip[n_skip] | u64 n_params | f64 params[n_params]
// Layer widths run from the encoded input width to the output width.

void write_checkpoint(std::ostream& os, const SdfField& field);
void write_checkpoint(std::ostream& os, const RadianceField& field);
SdfField read_sdf_checkpoint(std::istream& is);
RadianceField read_radiance_checkpoint(std::istream& is);

void save_checkpoint(const std::filesystem::path& path, const SdfField& field);
void save_checkpoint(const std::filesystem::path& path, const RadianceField& field);
SdfField load_sdf_checkpoint(const std::filesystem::path& path);
RadianceField load_radiance_checkpoint(const std::filesystem::path& path);

}  // namespace nsdf::field
