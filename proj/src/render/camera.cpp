#include "nsdf/render/camera.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <Eigen/LU>

namespace nsdf::render {

namespace {

// Camera-frame vector for the OpenCV-style backprojection [x, y, 1], remapped to the
// camera's own axis convention.
Vec3 to_convention(const Vec3& cv, Convention c) {
  return c == Convention::kOpenCV ? cv : Vec3(cv.x(), -cv.y(), -cv.z());
}

}  // namespace

Vec3 Camera::view_axis() const { return rotation() * to_convention(Vec3::UnitZ(), convention); }

void Camera::validate() const {
  require(width > 0 && height > 0, "camera: resolution must be positive");
  const Mat3 r = rotation();
  require((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6, "camera: pose rotation not orthonormal");
  require(r.determinant() > 0.0, "camera: pose rotation has negative determinant");
  require(pose.row(3).isApprox(Eigen::RowVector4d(0, 0, 0, 1)), "camera: pose last row must be 0 0 0 1");
  if (projection == Projection::kPinhole) {
    require(intrinsics(0, 0) > 0.0 && intrinsics(1, 1) > 0.0, "camera: focal lengths must be positive");
    require(std::abs(intrinsics.determinant()) > 1e-12, "camera: intrinsics not invertible");
  } else {
    require(ortho_width > 0.0 && ortho_height > 0.0, "camera: orthographic extent must be positive");
  }
}

Camera Camera::resized(int new_width, int new_height) const {
  require(new_width > 0 && new_height > 0, "camera: resolution must be positive");
  Camera c = *this;
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  c.intrinsics.row(0) *= sx;
  c.intrinsics.row(1) *= sy;
  c.width = new_width;
  c.height = new_height;
  return c;
}

Vec3 Camera::direction_at(double x, double y) const {
  if (projection == Projection::kOrthographic) return view_axis();
  const Vec3 cam = intrinsics.inverse() * Vec3(x, y, 1.0);
  return (rotation() * to_convention(cam, convention)).normalized();
}

Vec3 Camera::origin_at(double x, double y) const {
  if (projection == Projection::kPinhole) return center();
  const double px = (x / width - 0.5) * ortho_width;
  const double py = (y / height - 0.5) * ortho_height;
  return center() + rotation() * to_convention(Vec3(px, py, 0.0), convention);
}

std::optional<std::pair<double, double>> Camera::project(const Vec3& world) const {
  const Vec3 cam = to_convention(rotation().transpose() * (world - center()), convention);
  if (projection == Projection::kOrthographic) {
    return std::make_pair((cam.x() / ortho_width + 0.5) * width, (cam.y() / ortho_height + 0.5) * height);
  }
  if (cam.z() <= 0.0) return std::nullopt;
  const Vec3 h = intrinsics * (cam / cam.z());
  return std::make_pair(h.x(), h.y());
}

Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(std::abs(z.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY());
  x.normalize();
  const Vec3 y = z.cross(x);  // image y points down
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return r;
}

Camera look_at_pinhole(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width,
                       int height) {
  require(fov_y_deg > 0.0 && fov_y_deg < 180.0, "look_at_pinhole: fov must be in (0, 180)");
  Camera c;
  c.width = width;
  c.height = height;
  const double f = 0.5 * height / std::tan(0.5 * fov_y_deg * std::numbers::pi / 180.0);
  c.intrinsics << f, 0, 0.5 * width, 0, f, 0.5 * height, 0, 0, 1;
  c.pose.topLeftCorner<3, 3>() = look_at_rotation(eye, target, up);
  c.pose.topRightCorner<3, 1>() = eye;
  c.validate();
  return c;
}

Camera look_at_orthographic(const Vec3& eye, const Vec3& target, const Vec3& up, double extent, int width,
                            int height) {
  Camera c;
  c.projection = Projection::kOrthographic;
  c.width = width;
  c.height = height;
  c.ortho_height = extent;
  c.ortho_width = extent * width / height;
  c.pose.topLeftCorner<3, 3>() = look_at_rotation(eye, target, up);
  c.pose.topRightCorner<3, 1>() = eye;
  c.validate();
  return c;
}

}  // namespace nsdf::render
