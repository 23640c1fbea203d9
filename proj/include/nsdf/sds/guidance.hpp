#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nsdf/sds/sds.hpp"

namespace nsdf::sds {

/// Bilinear resize with half-pixel centers (align_corners = false), edge-clamped.
Image resize_bilinear(const Image& image, int width, int height);
/// Adjoint of resize_bilinear: maps a gradient on the resized image back to the source grid.
Image resize_bilinear_adjoint(const Image& gradient, int src_width, int src_height);

struct Grid {
  Image image;  // 2H x 2W
  Image mask;   // single channel, 1 on the active quadrant
};

/// 2x2 tiling: `active` at quadrant `active_quadrant` (0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right),
/// the three visible maps filling the remaining quadrants in order.
Grid compose_grid(const Image& active, const std::vector<Image>& visible, int active_quadrant = 0);
/// Gradient of the active tile given a gradient on the whole grid. Other quadrants are dropped.
Image grid_active_gradient(const Image& grid_gradient, int tile_width, int tile_height, int active_quadrant = 0);

/// "renders of the same ( {base} ) from different viewpoints".
std::string multiview_prompt(const std::string& base);

enum class SdsMode { kColor, kNormalSingle, kNormalMulti };
const char* to_string(SdsMode mode);

struct GuidanceSettings {
  std::string prompt_base = "object";
  double t_min = 0.0;
  double t_max = 0.5;
  double cfg_scale = 100.0;
  int oracle_resolution = 512;
  bool use_frozen = false;
  std::uint64_t frozen_seed = 0;
  bool rotate_normals = true;
  int active_quadrant = 0;
};

struct GuidanceResult {
  MatX gradient;  // d(virtual loss)/d(render node values), same shape as the render (pixels x 3)
  SdsMode mode = SdsMode::kColor;  // mode actually used (multi may fall back to single)
  double timestep = 0.0;
  std::uint64_t noise_seed = 0;
  bool skipped = false;  // oracle failure: no gradient this step
};

/// One guidance query for a rendered view.
///
/// Color mode: `values` is the rendered color. Normal modes: `values` holds raw normals; they are
/// optionally rotated (same random rotation for every tile), mapped to RGB, tiled for multi-view,
/// resized to the oracle resolution and sent. The returned gradient is pulled back through the
/// resize, the active-quadrant slice, the RGB clamp and the rotation. Randomness (t, fresh seed,
/// rotation) comes only from `rng`.
GuidanceResult apply_guidance(const MatX& values, int width, int height, SdsMode mode,
                              const std::vector<Image>& visible_normals, const GuidanceSettings& settings,
                              GuidanceOracle& oracle, std::mt19937_64& rng);

}  // namespace nsdf::sds
