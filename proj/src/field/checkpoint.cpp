#include "nsdf/field/checkpoint.hpp"

#include <fstream>

#include "nsdf/field/encoding.hpp"
#include "nsdf/io/binary.hpp"

namespace nsdf::field {

namespace {

enum class Kind : std::uint32_t { kSdf = 0, kRadiance = 1 };

struct Header {
  Kind kind;
  std::vector<int> dims;
  int levels;
  std::vector<int> skip;
};

void write_common(std::ostream& os, const Header& h, const VecX& params) {
  io::write_magic(os, "NSDF");
  io::write_le<std::uint32_t>(os, kCheckpointVersion);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h.kind));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h.dims.size()));
  for (int d : h.dims) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h.levels));
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h.skip.size()));
  for (int s : h.skip) io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(s));
  io::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) io::write_le<double>(os, params[i]);
  if (!os) throw RuntimeError("checkpoint write failed");
}

Header read_header(std::istream& is) {
  io::expect_magic(is, "NSDF");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw RuntimeError("unsupported checkpoint version " + std::to_string(version));
  }
  Header h;
  h.kind = static_cast<Kind>(io::read_le<std::uint32_t>(is));
  const auto n = io::read_le<std::uint32_t>(is);
  if (n < 3 || n > 1024) throw RuntimeError("checkpoint: implausible layer count");
  for (std::uint32_t i = 0; i < n; ++i) h.dims.push_back(static_cast<int>(io::read_le<std::uint32_t>(is)));
  h.levels = static_cast<int>(io::read_le<std::uint32_t>(is));
  const auto ns = io::read_le<std::uint32_t>(is);
  if (ns > n) throw RuntimeError("checkpoint: implausible skip count");
  for (std::uint32_t i = 0; i < ns; ++i) h.skip.push_back(static_cast<int>(io::read_le<std::uint32_t>(is)));
  return h;
}

void read_params(std::istream& is, VecX& params) {
  const auto count = io::read_le<std::uint64_t>(is);
  if (count != static_cast<std::uint64_t>(params.size())) {
    throw RuntimeError("checkpoint: parameter count does not match layer spec");
  }
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] = io::read_le<double>(is);
}

}  // namespace

void write_checkpoint(std::ostream& os, const SdfField& field) {
  write_common(os, {Kind::kSdf, field.layer_dims(), field.spec().encoding_levels, field.spec().skip_layers},
               field.params());
}

void write_checkpoint(std::ostream& os, const RadianceField& field) {
  write_common(os, {Kind::kRadiance, field.layer_dims(), field.spec().dir_encoding_levels, {}}, field.params());
}

SdfField read_sdf_checkpoint(std::istream& is) {
  const Header h = read_header(is);
  if (h.kind != Kind::kSdf) throw RuntimeError("checkpoint holds a radiance field, expected an SDF field");
  SdfFieldSpec spec;
  spec.encoding_levels = h.levels;
  spec.hidden.assign(h.dims.begin() + 1, h.dims.end() - 1);
  spec.feature_dim = h.dims.back() - 1;
  spec.skip_layers = h.skip;
  if (h.dims.front() != encoded_width(3, h.levels)) throw RuntimeError("checkpoint: input width mismatch");
  SdfField field(spec);
  read_params(is, field.params());
  return field;
}

RadianceField read_radiance_checkpoint(std::istream& is) {
  const Header h = read_header(is);
  if (h.kind != Kind::kRadiance) throw RuntimeError("checkpoint holds an SDF field, expected a radiance field");
  RadianceFieldSpec spec;
  spec.dir_encoding_levels = h.levels;
  spec.hidden.assign(h.dims.begin() + 1, h.dims.end() - 1);
  spec.feature_dim = h.dims.front() - 6 - static_cast<int>(encoded_width(3, h.levels));
  if (spec.feature_dim < 0 || h.dims.back() != 3) throw RuntimeError("checkpoint: bad radiance layer spec");
  RadianceField field(spec);
  read_params(is, field.params());
  return field;
}

void save_checkpoint(const std::filesystem::path& path, const SdfField& field) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, field);
}

void save_checkpoint(const std::filesystem::path& path, const RadianceField& field) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, field);
}

SdfField load_sdf_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeError("cannot open " + path.string());
  return read_sdf_checkpoint(is);
}

RadianceField load_radiance_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeError("cannot open " + path.string());
  return read_radiance_checkpoint(is);
}

}  // namespace nsdf::field
