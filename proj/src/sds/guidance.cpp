#include "nsdf/sds/guidance.hpp"

#include <algorithm>
#include <cmath>

#include <spdlog/spdlog.h>

#include "nsdf/render/render.hpp"

namespace nsdf::sds {

namespace {

// dst x src interpolation matrix along one axis.
MatX interp_matrix(int dst, int src) {
  MatX m = MatX::Zero(dst, src);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double x = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int x1 = std::min(x0 + 1, src - 1);
    const double f = x - x0;
    m(i, x0) += 1.0 - f;
    m(i, x1) += f;
  }
  return m;
}

MatX channel_plane(const Image& img, int c) {
  MatX p(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) p(y, x) = img.at(x, y, c);
  return p;
}

void set_plane(Image& img, int c, const MatX& p) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) img.at(x, y, c) = p(y, x);
}

std::pair<int, int> quadrant_origin(int q, int w, int h) { return {(q % 2) * w, (q / 2) * h}; }

}  // namespace

Image resize_bilinear(const Image& image, int width, int height) {
  require(image.width > 0 && image.height > 0 && width > 0 && height > 0, "resize: empty image");
  const MatX ry = interp_matrix(height, image.height);
  const MatX rx = interp_matrix(width, image.width);
  Image out(width, height, image.channels());
  for (int c = 0; c < image.channels(); ++c) set_plane(out, c, ry * channel_plane(image, c) * rx.transpose());
  return out;
}

Image resize_bilinear_adjoint(const Image& gradient, int src_width, int src_height) {
  require(src_width > 0 && src_height > 0, "resize adjoint: empty source");
  const MatX ry = interp_matrix(gradient.height, src_height);
  const MatX rx = interp_matrix(gradient.width, src_width);
  Image out(src_width, src_height, gradient.channels());
  for (int c = 0; c < gradient.channels(); ++c) set_plane(out, c, ry.transpose() * channel_plane(gradient, c) * rx);
  return out;
}

Grid compose_grid(const Image& active, const std::vector<Image>& visible, int active_quadrant) {
  require(visible.size() == 3, "compose_grid: exactly three visible maps required");
  require(active_quadrant >= 0 && active_quadrant < 4, "compose_grid: active quadrant out of range");
  const int w = active.width;
  const int h = active.height;
  for (const Image& v : visible) {
    require(v.width == w && v.height == h && v.channels() == active.channels(), "compose_grid: tile size mismatch");
  }
  Grid g{Image(2 * w, 2 * h, active.channels()), Image(2 * w, 2 * h, 1)};
  std::size_t next = 0;
  for (int q = 0; q < 4; ++q) {
    const Image& tile = q == active_quadrant ? active : visible[next++];
    const auto [ox, oy] = quadrant_origin(q, w, h);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < active.channels(); ++c) g.image.at(ox + x, oy + y, c) = tile.at(x, y, c);
        g.mask.at(ox + x, oy + y, 0) = q == active_quadrant ? 1.0 : 0.0;
      }
    }
  }
  return g;
}

Image grid_active_gradient(const Image& grid_gradient, int tile_width, int tile_height, int active_quadrant) {
  require(grid_gradient.width == 2 * tile_width && grid_gradient.height == 2 * tile_height,
          "grid_active_gradient: grid size mismatch");
  const auto [ox, oy] = quadrant_origin(active_quadrant, tile_width, tile_height);
  Image out(tile_width, tile_height, grid_gradient.channels());
  for (int y = 0; y < tile_height; ++y)
    for (int x = 0; x < tile_width; ++x)
      for (int c = 0; c < grid_gradient.channels(); ++c) out.at(x, y, c) = grid_gradient.at(ox + x, oy + y, c);
  return out;
}

std::string multiview_prompt(const std::string& base) {
  require(!base.empty(), "multiview_prompt: empty prompt base");
  return "renders of the same ( " + base + " ) from different viewpoints";
}

const char* to_string(SdsMode mode) {
  switch (mode) {
    case SdsMode::kColor:
      return "color";
    case SdsMode::kNormalSingle:
      return "single";
    case SdsMode::kNormalMulti:
      return "multi";
  }
  return "?";
}

GuidanceResult apply_guidance(const MatX& values, int width, int height, SdsMode mode,
                              const std::vector<Image>& visible_normals, const GuidanceSettings& settings,
                              GuidanceOracle& oracle, std::mt19937_64& rng) {
  require(values.rows() == static_cast<Eigen::Index>(width) * height && values.cols() == 3,
          "apply_guidance: render must be (width*height) x 3");
  if (mode == SdsMode::kNormalMulti && visible_normals.size() < 3) {
    spdlog::info("multi-view SDS needs 3 buffered visible normal maps, have {}; using single-view",
                 visible_normals.size());
    mode = SdsMode::kNormalSingle;
  }
  GuidanceResult result;
  result.mode = mode;
  result.timestep = sample_timestep(rng, settings.t_min, settings.t_max);
  result.noise_seed = settings.use_frozen ? settings.frozen_seed : rng();

  const bool normal = mode != SdsMode::kColor;
  Mat3 rot = Mat3::Identity();
  if (normal && settings.rotate_normals) rot = render::random_rotation(rng);

  Image tile(width, height, values);
  MatX rotated;
  if (normal) {
    rotated = render::rotate_normals(values, rot);
    tile.data = render::normals_to_rgb(rotated);
  }
  Image query = tile;
  GuidanceRequest req;
  req.prompt = settings.prompt_base;
  if (mode == SdsMode::kNormalMulti) {
    std::vector<Image> others;
    const std::size_t n = visible_normals.size();
    for (std::size_t i = n - 3; i < n; ++i) {
      const Image& v = visible_normals[i];
      require(v.width == width && v.height == height && v.channels() == 3,
              "apply_guidance: buffered normal map has a different resolution");
      others.emplace_back(width, height, render::normals_to_rgb(render::rotate_normals(v.data, rot)));
    }
    query = compose_grid(tile, others, settings.active_quadrant).image;
    req.prompt = multiview_prompt(settings.prompt_base);
    req.grid = GridLayout{2, 2, settings.active_quadrant};
  }
  req.image = resize_bilinear(query, settings.oracle_resolution, settings.oracle_resolution);
  req.timestep = result.timestep;
  req.cfg_scale = settings.cfg_scale;
  req.noise_seed = result.noise_seed;

  GuidanceResponse resp;
  try {
    resp = oracle.sds_gradient(req);
  } catch (const std::exception& e) {
    spdlog::warn("SDS step skipped: {}", e.what());
    result.skipped = true;
    result.gradient = MatX::Zero(values.rows(), 3);
    return result;
  }

  Image g = resize_bilinear_adjoint(resp.gradient, query.width, query.height);
  if (mode == SdsMode::kNormalMulti) g = grid_active_gradient(g, width, height, settings.active_quadrant);
  if (!normal) {
    result.gradient = std::move(g.data);
    return result;
  }
  // rgb = clamp((R n + 1) / 2): zero where clamped, then pull back through the rotation.
  MatX d = 0.5 * g.data;
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (int c = 0; c < 3; ++c)
      if (rotated(i, c) < -1.0 || rotated(i, c) > 1.0) d(i, c) = 0.0;
  result.gradient = d * rot;
  return result;
}

}  // namespace nsdf::sds
