#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "nsdf/common.hpp"

namespace nsdf::render {

enum class Projection { kPinhole, kOrthographic };

/// Camera-frame axis convention. OpenCV: +x right, +y down, looks along +z.
/// OpenGL: +x right, +y up, looks along -z.
enum class Convention { kOpenCV, kOpenGL };

struct Camera {
  Projection projection = Projection::kPinhole;
  Convention convention = Convention::kOpenCV;
  Mat3 intrinsics = Mat3::Identity();  // pinhole only
  double ortho_width = 2.0;            // world-space extent of the image plane (orthographic)
  double ortho_height = 2.0;
  Mat4 pose = Mat4::Identity();  // world-from-camera
  int width = 64;
  int height = 64;

  [[nodiscard]] Mat3 rotation() const { return pose.topLeftCorner<3, 3>(); }
  [[nodiscard]] Vec3 center() const { return pose.topRightCorner<3, 1>(); }
  /// Viewing axis in world coordinates (unit).
  [[nodiscard]] Vec3 view_axis() const;
  /// Throws ValidationError unless the rotation is orthonormal and focal entries are positive.
  void validate() const;
  /// Same camera at a new resolution; intrinsics scale with the image.
  [[nodiscard]] Camera resized(int new_width, int new_height) const;

  /// Direction of the ray through continuous image coordinates (x, y) (pixel centers at +0.5).
  [[nodiscard]] Vec3 direction_at(double x, double y) const;
  /// Ray origin for continuous image coordinates.
  [[nodiscard]] Vec3 origin_at(double x, double y) const;
  /// Continuous image coordinates of a world point; empty if it lies behind the camera.
  [[nodiscard]] std::optional<std::pair<double, double>> project(const Vec3& world) const;
};

/// Pinhole camera at `eye` looking at `target`. fov is vertical, in degrees. OpenCV convention.
Camera look_at_pinhole(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width, int height);
/// Orthographic camera whose image plane spans `extent` world units vertically.
Camera look_at_orthographic(const Vec3& eye, const Vec3& target, const Vec3& up, double extent, int width,
                            int height);

/// Rotation taking camera axes (OpenCV) to world axes for a camera at eye looking at target.
Mat3 look_at_rotation(const Vec3& eye, const Vec3& target, const Vec3& up);

}  // namespace nsdf::render
