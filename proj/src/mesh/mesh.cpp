#include "nsdf/mesh/mesh.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "nsdf/io/binary.hpp"

namespace nsdf::mesh {

Vec3 TriangleMesh::center(Eigen::Index t) const { return (corner(t, 0) + corner(t, 1) + corner(t, 2)) / 3.0; }

Vec3 TriangleMesh::cross(Eigen::Index t) const {
  const Vec3 a = corner(t, 0);
  return (corner(t, 1) - a).cross(corner(t, 2) - a);
}

Vec3 TriangleMesh::unit_normal(Eigen::Index t) const {
  const Vec3 c = cross(t);
  const double n = c.norm();
  return n > 0.0 ? Vec3(c / n) : Vec3::Zero();
}

double TriangleMesh::triangle_area(Eigen::Index t) const { return 0.5 * cross(t).norm(); }

double TriangleMesh::area() const {
  double a = 0.0;
  for (Eigen::Index t = 0; t < triangle_count(); ++t) a += triangle_area(t);
  return a;
}

double TriangleMesh::signed_volume() const {
  double v = 0.0;
  for (Eigen::Index t = 0; t < triangle_count(); ++t) v += corner(t, 0).dot(corner(t, 1).cross(corner(t, 2)));
  return v / 6.0;
}

void TriangleMesh::validate() const {
  if (triangles.size() > 0) {
    require(triangles.minCoeff() >= 0 && triangles.maxCoeff() < vertex_count(), "mesh: triangle index out of range");
  }
  require(visible.empty() || static_cast<Eigen::Index>(visible.size()) == triangle_count(),
          "mesh: visibility flags do not match the triangle count");
  require(vertices.allFinite(), "mesh: non-finite vertex");
}

namespace {

struct VecKey {
  std::array<std::uint64_t, 3> bits;
  bool operator==(const VecKey& o) const { return bits == o.bits; }
};

struct VecKeyHash {
  std::size_t operator()(const VecKey& k) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::uint64_t b : k.bits) h = (h ^ b) * 1099511628211ULL;
    return static_cast<std::size_t>(h);
  }
};

VecKey key_of(const Eigen::Ref<const Eigen::RowVector3d>& p) {
  // +0.0 and -0.0 weld together.
  return {std::bit_cast<std::uint64_t>(p[0] + 0.0), std::bit_cast<std::uint64_t>(p[1] + 0.0),
          std::bit_cast<std::uint64_t>(p[2] + 0.0)};
}

}  // namespace

TriangleMesh cleanup(const TriangleMesh& mesh) {
  mesh.validate();
  std::unordered_map<VecKey, int, VecKeyHash> index;
  std::vector<int> remap(static_cast<std::size_t>(mesh.vertex_count()));
  std::vector<int> first_of;  // welded id -> first original vertex
  for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
    auto [it, inserted] = index.try_emplace(key_of(mesh.vertices.row(i)), static_cast<int>(first_of.size()));
    if (inserted) first_of.push_back(static_cast<int>(i));
    remap[static_cast<std::size_t>(i)] = it->second;
  }
  std::vector<std::array<int, 3>> tris;
  std::vector<std::uint8_t> flags;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    const std::array<int, 3> f = {remap[mesh.triangles(t, 0)], remap[mesh.triangles(t, 1)], remap[mesh.triangles(t, 2)]};
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
    if (mesh.triangle_area(t) <= 1e-12) continue;
    tris.push_back(f);
    if (!mesh.visible.empty()) flags.push_back(mesh.visible[static_cast<std::size_t>(t)]);
  }
  std::vector<int> compact(first_of.size(), -1);
  int next = 0;
  for (auto& f : tris)
    for (int& v : f) {
      if (compact[static_cast<std::size_t>(v)] < 0) compact[static_cast<std::size_t>(v)] = next++;
      v = compact[static_cast<std::size_t>(v)];
    }
  TriangleMesh out;
  out.vertices.resize(next, 3);
  for (std::size_t w = 0; w < first_of.size(); ++w)
    if (compact[w] >= 0) out.vertices.row(compact[w]) = mesh.vertices.row(first_of[w]);
  out.triangles.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t t = 0; t < tris.size(); ++t)
    for (int k = 0; k < 3; ++k) out.triangles(static_cast<Eigen::Index>(t), k) = tris[t][static_cast<std::size_t>(k)];
  out.visible = std::move(flags);
  return out;
}

TriangleMesh transformed(const TriangleMesh& mesh, const Vec3& center, double scale) {
  TriangleMesh out = mesh;
  out.vertices = ((mesh.vertices.rowwise() - center.transpose()) * scale).eval();
  return out;
}

TriangleMesh rigid_transformed(const TriangleMesh& mesh, const Mat3& rotation, const Vec3& translation) {
  TriangleMesh out = mesh;
  out.vertices = ((mesh.vertices * rotation.transpose()).rowwise() + translation.transpose()).eval();
  return out;
}

std::size_t boundary_or_nonmanifold_edges(const TriangleMesh& mesh) {
  std::map<std::pair<int, int>, int> count;
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    for (int k = 0; k < 3; ++k) {
      int a = mesh.triangles(t, k);
      int b = mesh.triangles(t, (k + 1) % 3);
      if (a > b) std::swap(a, b);
      ++count[{a, b}];
    }
  }
  std::size_t bad = 0;
  for (const auto& [edge, n] : count) bad += n != 2;
  return bad;
}

// ---- OBJ --------------------------------------------------------------------

void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream os(path);
  if (!os) throw RuntimeError("cannot open " + path.string() + " for writing");
  os.precision(17);
  for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i)
    os << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t)
    os << "f " << mesh.triangles(t, 0) + 1 << ' ' << mesh.triangles(t, 1) + 1 << ' ' << mesh.triangles(t, 2) + 1
       << '\n';
  if (!os) throw RuntimeError("write failed: " + path.string());
}

TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw RuntimeError("cannot open " + path.string());
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> tris;
  std::string line;
  long lineno = 0;
  auto fail = [&](const std::string& what) {
    throw RuntimeError(path.string() + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ls >> p[0] >> p[1] >> p[2])) fail("malformed vertex");
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        const long v = std::stol(tok.substr(0, tok.find('/')));
        const long resolved = v < 0 ? static_cast<long>(verts.size()) + v : v - 1;
        if (resolved < 0 || resolved >= static_cast<long>(verts.size())) fail("face index out of range");
        idx.push_back(static_cast<int>(resolved));
      }
      if (idx.size() < 3) fail("face with fewer than 3 vertices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) tris.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  TriangleMesh m;
  m.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) m.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  m.triangles.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t t = 0; t < tris.size(); ++t)
    for (int k = 0; k < 3; ++k) m.triangles(static_cast<Eigen::Index>(t), k) = tris[t][static_cast<std::size_t>(k)];
  return m;
}

// ---- PLY --------------------------------------------------------------------

void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw RuntimeError("cannot open " + path.string() + " for writing");
  os << "ply\nformat binary_little_endian 1.0\n"
     << "element vertex " << mesh.vertex_count() << "\n"
     << "property double x\nproperty double y\nproperty double z\n"
     << "element face " << mesh.triangle_count() << "\n"
     << "property list uchar int vertex_indices\nend_header\n";
  for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i)
    for (int k = 0; k < 3; ++k) io::write_le(os, mesh.vertices(i, k));
  for (Eigen::Index t = 0; t < mesh.triangle_count(); ++t) {
    io::write_le<std::uint8_t>(os, 3);
    for (int k = 0; k < 3; ++k) io::write_le<std::int32_t>(os, mesh.triangles(t, k));
  }
  if (!os) throw RuntimeError("write failed: " + path.string());
}

namespace {

std::size_t type_size(const std::string& t) {
  static const std::map<std::string, std::size_t> sizes = {
      {"char", 1}, {"uchar", 1}, {"int8", 1}, {"uint8", 1}, {"short", 2}, {"ushort", 2}, {"int16", 2},
      {"uint16", 2}, {"int", 4}, {"uint", 4}, {"int32", 4}, {"uint32", 4}, {"float", 4}, {"float32", 4},
      {"double", 8}, {"float64", 8}};
  const auto it = sizes.find(t);
  if (it == sizes.end()) throw RuntimeError("PLY: unsupported property type '" + t + "'");
  return it->second;
}

double read_as_double(std::istream& is, const std::string& t) {
  if (t == "char" || t == "int8") return io::read_le<std::int8_t>(is);
  if (t == "uchar" || t == "uint8") return io::read_le<std::uint8_t>(is);
  if (t == "short" || t == "int16") return io::read_le<std::int16_t>(is);
  if (t == "ushort" || t == "uint16") return io::read_le<std::uint16_t>(is);
  if (t == "int" || t == "int32") return io::read_le<std::int32_t>(is);
  if (t == "uint" || t == "uint32") return io::read_le<std::uint32_t>(is);
  if (t == "float" || t == "float32") return io::read_le<float>(is);
  if (t == "double" || t == "float64") return io::read_le<double>(is);
  throw RuntimeError("PLY: unsupported property type '" + t + "'");
}

struct PlyProperty {
  std::string name;
  std::string type;        // scalar type, or item type for lists
  std::string count_type;  // non-empty for lists
};

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<PlyProperty> props;
};

}  // namespace

TriangleMesh read_ply(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw RuntimeError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line != "ply" && line != "ply\r") throw RuntimeError(path.string() + ": not a PLY file");
  std::vector<PlyElement> elements;
  bool binary_le = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tag == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tag == "property") {
      if (elements.empty()) throw RuntimeError(path.string() + ": property before element");
      PlyProperty p;
      std::string t;
      ls >> t;
      if (t == "list") {
        ls >> p.count_type >> p.type >> p.name;
      } else {
        p.type = t;
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!binary_le) throw RuntimeError(path.string() + ": only binary_little_endian PLY is supported");
  TriangleMesh m;
  std::vector<std::array<int, 3>> tris;
  for (const PlyElement& e : elements) {
    if (e.name == "vertex") m.vertices.resize(e.count, 3);
    for (long i = 0; i < e.count; ++i) {
      for (const PlyProperty& p : e.props) {
        if (!p.count_type.empty()) {
          const auto n = static_cast<long>(read_as_double(is, p.count_type));
          std::vector<int> idx(static_cast<std::size_t>(n));
          for (auto& v : idx) v = static_cast<int>(read_as_double(is, p.type));
          if (e.name == "face" && (p.name == "vertex_indices" || p.name == "vertex_index")) {
            if (n < 3) throw RuntimeError(path.string() + ": face with fewer than 3 vertices");
            for (long k = 1; k + 1 < n; ++k)
              tris.push_back({idx[0], idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(k + 1)]});
          }
          continue;
        }
        if (e.name == "vertex" && (p.name == "x" || p.name == "y" || p.name == "z")) {
          m.vertices(i, p.name[0] - 'x') = read_as_double(is, p.type);
        } else {
          is.ignore(static_cast<std::streamsize>(type_size(p.type)));
          if (!is) throw RuntimeError(path.string() + ": truncated PLY body");
        }
      }
    }
  }
  m.triangles.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t t = 0; t < tris.size(); ++t)
    for (int k = 0; k < 3; ++k) m.triangles(static_cast<Eigen::Index>(t), k) = tris[t][static_cast<std::size_t>(k)];
  try {
    m.validate();
  } catch (const ValidationError& e) {
    throw RuntimeError(path.string() + ": " + e.what());
  }
  return m;
}

void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh) {
  const std::string ext = path.extension().string();
  if (ext == ".obj") return write_obj(path, mesh);
  if (ext == ".ply") return write_ply(path, mesh);
  throw ValidationError("unsupported mesh extension '" + ext + "' (use .obj or .ply)");
}

TriangleMesh read_mesh(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".obj") return read_obj(path);
  if (ext == ".ply") return read_ply(path);
  throw ValidationError("unsupported mesh extension '" + ext + "' (use .obj or .ply)");
}

}  // namespace nsdf::mesh
