#include "nsdf/field/analytic.hpp"

#include <cmath>
#include <sstream>

namespace nsdf::field {

AnalyticSdf::AnalyticSdf(std::string name, Eval eval, Eigen::Index feature_dim)
    : name_(std::move(name)), eval_(std::move(eval)), feature_dim_(feature_dim) {}

AnalyticSdf AnalyticSdf::with_feature_dim(Eigen::Index dim) const { return {name_, eval_, dim}; }

SdfOutput AnalyticSdf::forward(ad::Tape& tape, const MatX& points, VecX*) const {
  require(points.cols() == 3, "AnalyticSdf::forward: points must be N x 3");
  MatX f(points.rows(), 1);
  MatX g(points.rows(), 3);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    Vec3 grad;
    f(i, 0) = eval_(points.row(i).transpose(), &grad);
    g.row(i) = grad.transpose();
  }
  SdfOutput out;
  out.sdf = tape.constant(std::move(f));
  out.gradient = tape.constant(std::move(g));
  out.feature = tape.constant(MatX::Zero(points.rows(), feature_dim_));
  return out;
}

VecX AnalyticSdf::values(const MatX& points) const {
  VecX f(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) f[i] = eval_(points.row(i).transpose(), nullptr);
  return f;
}

AnalyticSdf sphere_sdf(double radius, const Vec3& center) {
  require(radius > 0.0, "sphere_sdf: radius must be > 0");
  return {"sphere", [radius, center](const Vec3& p, Vec3* g) {
            const Vec3 d = p - center;
            const double len = d.norm();
            if (g) *g = len > 0.0 ? Vec3(d / len) : Vec3(0.0, 0.0, 1.0);
            return len - radius;
          }};
}

AnalyticSdf box_sdf(const Vec3& half_extent, const Vec3& center) {
  require((half_extent.array() > 0.0).all(), "box_sdf: half extents must be > 0");
  return {"box", [half_extent, center](const Vec3& p, Vec3* g) {
            const Vec3 rel = p - center;
            const Vec3 q = rel.cwiseAbs() - half_extent;
            const Vec3 qpos = q.cwiseMax(0.0);
            const double outside = qpos.norm();
            Eigen::Index axis = 0;
            const double inside = std::min(q.maxCoeff(&axis), 0.0);
            if (g) {
              Vec3 sign;
              for (int k = 0; k < 3; ++k) sign[k] = rel[k] >= 0.0 ? 1.0 : -1.0;
              if (outside > 0.0) {
                *g = qpos.cwiseProduct(sign) / outside;
              } else {
                *g = Vec3::Zero();
                (*g)[axis] = sign[axis];
              }
            }
            return outside + inside;
          }};
}

AnalyticSdf torus_sdf(double major_radius, double minor_radius, const Vec3& center) {
  require(major_radius > minor_radius && minor_radius > 0.0, "torus_sdf: need R > r > 0");
  return {"torus", [major_radius, minor_radius, center](const Vec3& p, Vec3* g) {
            const Vec3 rel = p - center;
            const double rxy = std::hypot(rel.x(), rel.y());
            const Vec3 ring = rxy > 0.0 ? Vec3(rel.x() / rxy * major_radius, rel.y() / rxy * major_radius, 0.0)
                                        : Vec3(major_radius, 0.0, 0.0);
            const Vec3 d = rel - ring;
            const double len = d.norm();
            if (g) *g = len > 0.0 ? Vec3(d / len) : Vec3(0.0, 0.0, 1.0);
            return len - minor_radius;
          }};
}

AnalyticSdf plane_sdf(const Vec3& normal, double offset) {
  require(normal.norm() > 0.0, "plane_sdf: zero normal");
  const Vec3 n = normal.normalized();
  return {"plane", [n, offset](const Vec3& p, Vec3* g) {
            if (g) *g = n;
            return p.dot(n) - offset;
          }};
}

AnalyticSdf union_sdf(const AnalyticSdf& a, const AnalyticSdf& b) {
  return {"union(" + a.name() + "," + b.name() + ")", [a, b](const Vec3& p, Vec3* g) {
            Vec3 ga;
            Vec3 gb;
            const double fa = a(p, &ga);
            const double fb = b(p, &gb);
            if (g) *g = fa <= fb ? ga : gb;
            return std::min(fa, fb);
          }};
}

AnalyticSdf scaled_sdf(const AnalyticSdf& a, double k) {
  return {a.name(), [a, k](const Vec3& p, Vec3* g) {
            const double f = a(p, g);
            if (g) *g *= k;
            return k * f;
          }};
}

namespace {

std::vector<double> parse_numbers(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ValidationError("shape spec: bad number '" + tok + "'");
    }
  }
  return out;
}

}  // namespace

AnalyticSdf parse_shape(const std::string& spec) {
  const auto colon = spec.find(':');
  require(colon != std::string::npos, "shape spec must look like kind:params, got '" + spec + "'");
  const std::string kind = spec.substr(0, colon);
  const std::string rest = spec.substr(colon + 1);
  if (kind == "union") {
    const auto bar = rest.find('|');
    require(bar != std::string::npos, "union spec needs two shapes separated by '|'");
    return union_sdf(parse_shape(rest.substr(0, bar)), parse_shape(rest.substr(bar + 1)));
  }
  const std::vector<double> v = parse_numbers(rest);
  if (kind == "sphere") {
    require(v.size() == 1, "sphere spec: sphere:radius");
    return sphere_sdf(v[0]);
  }
  if (kind == "box") {
    require(v.size() == 3, "box spec: box:hx,hy,hz");
    return box_sdf(Vec3(v[0], v[1], v[2]));
  }
  if (kind == "torus") {
    require(v.size() == 2, "torus spec: torus:R,r");
    return torus_sdf(v[0], v[1]);
  }
  throw ValidationError("unknown shape kind '" + kind + "' (expected sphere | box | torus | union)");
}

}  // namespace nsdf::field
