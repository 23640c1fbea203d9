#include "nsdf/render/render.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <Eigen/Geometry>

namespace nsdf::render {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

RayBundle RayBundle::slice(Eigen::Index start, Eigen::Index count) const {
  RayBundle r;
  r.origins = origins.middleRows(start, count);
  r.directions = directions.middleRows(start, count);
  r.pixels = pixels.middleRows(start, count);
  r.near = near.segment(start, count);
  r.far = far.segment(start, count);
  r.hit.assign(hit.begin() + start, hit.begin() + start + count);
  return r;
}

void bound_rays(RayBundle& rays, double radius) {
  require(radius > 0.0, "bound_rays: radius must be > 0");
  const Eigen::Index n = rays.size();
  rays.near.resize(n);
  rays.far.resize(n);
  rays.hit.assign(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 o = rays.origins.row(i).transpose();
    const Vec3 d = rays.directions.row(i).transpose();
    const double b = o.dot(d);
    const double c = o.squaredNorm() - radius * radius;
    const double disc = b * b - c;
    const double mid = std::max(-b, 0.0);
    if (disc <= 0.0) {
      rays.near[i] = mid;
      rays.far[i] = mid + 1e-3;
      continue;
    }
    const double root = std::sqrt(disc);
    const double t0 = std::max(-b - root, 0.0);
    const double t1 = -b + root;
    if (t1 <= t0) {
      rays.near[i] = mid;
      rays.far[i] = mid + 1e-3;
      continue;
    }
    rays.near[i] = t0;
    rays.far[i] = t1;
    rays.hit[static_cast<std::size_t>(i)] = 1;
  }
}

RayBundle generate_rays(const Camera& camera, const std::vector<std::pair<int, int>>& pixels, double bound_radius) {
  camera.validate();
  const auto n = static_cast<Eigen::Index>(pixels.size());
  RayBundle r;
  r.origins.resize(n, 3);
  r.directions.resize(n, 3);
  r.pixels.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [x, y] = pixels[static_cast<std::size_t>(i)];
    if (x < 0 || y < 0 || x >= camera.width || y >= camera.height) {
      throw ValidationError("generate_rays: pixel (" + std::to_string(x) + ", " + std::to_string(y) +
                            ") outside the image");
    }
    r.origins.row(i) = camera.origin_at(x + 0.5, y + 0.5).transpose();
    r.directions.row(i) = camera.direction_at(x + 0.5, y + 0.5).transpose();
    r.pixels(i, 0) = x;
    r.pixels(i, 1) = y;
  }
  bound_rays(r, bound_radius);
  return r;
}

RayBundle generate_all_rays(const Camera& camera, double bound_radius) {
  std::vector<std::pair<int, int>> px;
  px.reserve(static_cast<std::size_t>(camera.width) * camera.height);
  for (int y = 0; y < camera.height; ++y)
    for (int x = 0; x < camera.width; ++x) px.emplace_back(x, y);
  return generate_rays(camera, px, bound_radius);
}

double SScale::value() const { return std::exp(10.0 * u); }

VecX neus_weights(const VecX& sdf_values, const VecX& deltas, double s) {
  const Eigen::Index n = sdf_values.size();
  require(n >= 2, "neus_weights: need at least two samples");
  require(deltas.size() == n - 1, "neus_weights: deltas must have one entry per section");
  require((deltas.array() > 0.0).all(), "neus_weights: samples must be strictly ordered by depth");
  require(s > 0.0, "neus_weights: s must be > 0");
  VecX w(n - 1);
  double trans = 1.0;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    const double pi = sigmoid(s * sdf_values[i]);
    const double pn = sigmoid(s * sdf_values[i + 1]);
    const double alpha = pi > 0.0 ? std::max((pi - pn) / pi, 0.0) : 0.0;
    w[i] = alpha * trans;
    trans *= 1.0 - alpha;
  }
  return w;
}

MatX sample_depths(const field::SdfModel& sdf, const RayBundle& rays, const SamplingSpec& spec,
                   std::mt19937_64* jitter) {
  require(spec.n_coarse >= 2 && spec.n_fine >= 0, "sampling: need >= 2 coarse and >= 0 fine samples");
  const Eigen::Index n = rays.size();
  const int nc = spec.n_coarse;
  const int nf = spec.n_fine;
  MatX coarse(n, nc);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double len = rays.far[i] - rays.near[i];
    for (int k = 0; k < nc; ++k) {
      const double u = jitter ? u01(*jitter) : 0.5;
      coarse(i, k) = rays.near[i] + (k + u) / nc * len;
    }
  }
  MatX fine(n, nf);
  if (nf > 0) {
    MatX pts(n * nc, 3);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < nc; ++k)
        pts.row(i * nc + k) = rays.origins.row(i) + coarse(i, k) * rays.directions.row(i);
    const VecX f = sdf.values(pts);
    const double s = spec.upsample_s;
    std::vector<double> w(static_cast<std::size_t>(nc - 1));
    std::vector<double> cdf(static_cast<std::size_t>(nc));
    for (Eigen::Index i = 0; i < n; ++i) {
      double trans = 1.0;
      double prev_cos = 0.0;
      for (int k = 0; k + 1 < nc; ++k) {
        const double f0 = f[i * nc + k];
        const double f1 = f[i * nc + k + 1];
        const double dist = coarse(i, k + 1) - coarse(i, k);
        const double mid = 0.5 * (f0 + f1);
        const double cos_val = (f1 - f0) / (dist + 1e-5);
        const double c = std::clamp(std::min(cos_val, prev_cos), -1e3, 0.0);
        prev_cos = cos_val;
        const double pe = sigmoid(s * (mid - c * dist * 0.5));
        const double ne = sigmoid(s * (mid + c * dist * 0.5));
        const double alpha = std::clamp((pe - ne + 1e-5) / (pe + 1e-5), 0.0, 1.0);
        w[static_cast<std::size_t>(k)] = alpha * trans + 1e-5;
        trans *= 1.0 - alpha + 1e-7;
      }
      double total = 0.0;
      for (double v : w) total += v;
      cdf[0] = 0.0;
      for (int k = 0; k + 1 < nc; ++k) cdf[static_cast<std::size_t>(k + 1)] = cdf[static_cast<std::size_t>(k)] + w[static_cast<std::size_t>(k)] / total;
      int k = 0;
      for (int j = 0; j < nf; ++j) {
        const double u = (j + 0.5) / nf;
        while (k + 2 < nc && cdf[static_cast<std::size_t>(k + 1)] <= u) ++k;
        const double lo = cdf[static_cast<std::size_t>(k)];
        const double hi = cdf[static_cast<std::size_t>(k + 1)];
        const double t = hi > lo ? std::clamp((u - lo) / (hi - lo), 0.0, 1.0) : 0.5;
        fine(i, j) = coarse(i, k) + t * (coarse(i, k + 1) - coarse(i, k));
      }
    }
  }
  MatX depths(n, nc + nf + 2);
  std::vector<double> row(static_cast<std::size_t>(nc + nf + 2));
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    row[m++] = rays.near[i];
    for (int k = 0; k < nc; ++k) row[m++] = coarse(i, k);
    for (int j = 0; j < nf; ++j) row[m++] = fine(i, j);
    row[m++] = rays.far[i];
    std::sort(row.begin() + 1, row.end() - 1);
    for (std::size_t k = 0; k < row.size(); ++k) depths(i, static_cast<Eigen::Index>(k)) = row[k];
  }
  return depths;
}

RenderNodes render_rays(ad::Tape& tape, const field::SdfModel& sdf, const field::RadianceModel* radiance,
                        const RayBundle& rays, const MatX& depths, const SamplingSpec& spec, ad::Var s,
                        VecX* sdf_grad, VecX* rad_grad) {
  const Eigen::Index n = rays.size();
  require(depths.rows() == n && depths.cols() >= 2, "render_rays: depth matrix shape mismatch");
  const Eigen::Index S = depths.cols() - 1;
  MatX pts(n * S, 3);
  MatX dirs(n * S, 3);
  MatX half(n * S, 1);
  MatX mask(n * S, 1);
  bool any_miss = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool hit = rays.hit[static_cast<std::size_t>(i)] != 0;
    any_miss |= !hit;
    for (Eigen::Index k = 0; k < S; ++k) {
      const Eigen::Index r = i * S + k;
      const double a = depths(i, k);
      const double b = depths(i, k + 1);
      require(b >= a, "render_rays: depths must be nondecreasing");
      pts.row(r) = rays.origins.row(i) + 0.5 * (a + b) * rays.directions.row(i);
      dirs.row(r) = rays.directions.row(i);
      half(r, 0) = 0.5 * (b - a);
      mask(r, 0) = hit ? 1.0 : 0.0;
    }
  }

  const field::SdfOutput out = sdf.forward(tape, pts, sdf_grad);
  const ad::Var cosv = ad::row_dot(out.gradient, tape.constant(dirs));
  const ad::Var iter_cos = ad::scale(ad::relu(ad::scale(cosv, -1.0)), -1.0);
  const ad::Var step = ad::mul(iter_cos, tape.constant(std::move(half)));
  ad::Var alpha = ad::neus_alpha(ad::sub(out.sdf, step), ad::add(out.sdf, step), s);
  if (any_miss) alpha = ad::mul(alpha, tape.constant(std::move(mask)));
  const ad::Var w = ad::composite_weights(alpha, S);

  RenderNodes nodes;
  nodes.weights = w;
  nodes.opacity = ad::segment_sum(w, S);
  nodes.normal = ad::segment_sum(ad::mul_col(out.gradient, w), S);
  nodes.sample_sdf = out.sdf;
  nodes.sample_gradient = out.gradient;
  if (radiance) {
    const ad::Var c = radiance->forward(tape, pts, dirs, out.gradient, out.feature, rad_grad);
    const ad::Var sum_c = ad::segment_sum(ad::mul_col(c, w), S);
    const ad::Var bg_fill = ad::matmul_wt(nodes.opacity, tape.constant(spec.background));
    nodes.color = ad::add_row(ad::sub(sum_c, bg_fill), tape.constant(spec.background.transpose()));
  }
  nodes.sample_points = std::move(pts);
  return nodes;
}

RenderOutput render(const field::SdfModel& sdf, const field::RadianceModel* radiance, const RayBundle& rays,
                    const SamplingSpec& spec, double s, int threads, std::size_t chunk) {
  require(s > 0.0, "render: s must be > 0");
  require(chunk > 0, "render: chunk must be > 0");
  const Eigen::Index n = rays.size();
  const Eigen::Index S = sections_per_ray(spec);
  RenderOutput out;
  out.color = MatX::Zero(n, radiance ? 3 : 0);
  out.normal = MatX::Zero(n, 3);
  out.opacity = VecX::Zero(n);
  out.weights = MatX::Zero(n, S);
  const auto step = static_cast<Eigen::Index>(chunk);
  const Eigen::Index n_chunks = (n + step - 1) / step;
  auto work = [&](Eigen::Index first_chunk, Eigen::Index stride) {
    for (Eigen::Index c = first_chunk; c < n_chunks; c += stride) {
      const Eigen::Index start = c * step;
      const Eigen::Index count = std::min(step, n - start);
      const RayBundle sub = rays.slice(start, count);
      ad::Tape tape(false);
      const MatX depths = sample_depths(sdf, sub, spec, nullptr);
      const RenderNodes nodes =
          render_rays(tape, sdf, radiance, sub, depths, spec, tape.constant(MatX::Constant(1, 1, s)), nullptr, nullptr);
      if (radiance) out.color.middleRows(start, count) = nodes.color.value();
      out.normal.middleRows(start, count) = nodes.normal.value();
      out.opacity.segment(start, count) = nodes.opacity.value().col(0);
      out.weights.middleRows(start, count) =
          Eigen::Map<const MatX>(nodes.weights.value().data(), S, count).transpose();
    }
  };
  const int workers = static_cast<int>(std::clamp<Eigen::Index>(threads, 1, std::max<Eigen::Index>(n_chunks, 1)));
  if (workers <= 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work, t, workers);
    for (auto& th : pool) th.join();
  }
  return out;
}

MatX render_color(const field::SdfModel& sdf, const field::RadianceModel& radiance, const RayBundle& rays,
                  const SamplingSpec& spec, double s) {
  return render(sdf, &radiance, rays, spec, s).color;
}

MatX render_normal_map(const field::SdfModel& sdf, const RayBundle& rays, const SamplingSpec& spec, double s) {
  return render(sdf, nullptr, rays, spec, s).normal;
}

VecX render_opacity(const field::SdfModel& sdf, const RayBundle& rays, const SamplingSpec& spec, double s) {
  return render(sdf, nullptr, rays, spec, s).opacity;
}

MatX rotate_normals(const MatX& normals, const Mat3& rotation) {
  require(normals.cols() == 3, "rotate_normals: normals must be N x 3");
  require((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6,
          "rotate_normals: matrix is not orthonormal");
  require(rotation.determinant() > 0.0, "rotate_normals: reflection, not a rotation");
  return normals * rotation.transpose();
}

MatX normals_to_rgb(const MatX& normals) {
  return ((normals.array() + 1.0) * 0.5).cwiseMax(0.0).cwiseMin(1.0).matrix();
}

MatX rgb_to_normals(const MatX& rgb) { return (2.0 * rgb.array() - 1.0).matrix(); }

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

}  // namespace nsdf::render
