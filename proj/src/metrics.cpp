// SPDX-License-Identifier: Apache-2.0
#include "dgae/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

namespace dgae {
namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_window_1d() {
  std::vector<double> g(kWin);
  double sum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSigma * kSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

/// Valid-mode separable filtering of an [h, w] map.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& g) {
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h * ow));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kWin; ++k) acc += g[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y * w + x + k)];
      tmp[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int k = 0; k < kWin; ++k) acc += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((y + k) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  return out;
}

void check_pair(const TensorF& x, const TensorF& x_hat, const char* what) {
  require_same_shape(x.shape(), x_hat.shape(), what);
  if (x.rank() != 4) throw ShapeError(std::string(what) + ": expected NCHW batch");
}

double unit(float v) { return (static_cast<double>(v) + 1.0) / 2.0; }

}  // namespace

PerImage psnr(const TensorF& x, const TensorF& x_hat) {
  check_pair(x, x_hat, "psnr");
  const std::int64_t n = x.dim(0);
  const std::size_t per = x.size() / static_cast<std::size_t>(n);
  PerImage out;
  for (std::int64_t i = 0; i < n; ++i) {
    double se = 0;
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t q = static_cast<std::size_t>(i) * per + j;
      const double d = unit(x[q]) - unit(x_hat[q]);
      se += d * d;
    }
    const double mse = se / static_cast<double>(per);
    const double db = mse > 0 ? std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse)) : kPsnrCap;
    out.values.push_back(db);
    out.mean += db;
  }
  out.mean /= static_cast<double>(n);
  return out;
}

double ssim_gray(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  if (h < kWin || w < kWin) throw ConfigError("ssim: image smaller than the 11x11 window");
  static const std::vector<double> g = gaussian_window_1d();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = filter_valid(a, h, w, g), mu_b = filter_valid(b, h, w, g);
  const auto e_aa = filter_valid(aa, h, w, g), e_bb = filter_valid(bb, h, w, g), e_ab = filter_valid(ab, h, w, g);
  double acc = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = e_aa[i] - mu_a[i] * mu_a[i];
    const double vb = e_bb[i] - mu_b[i] * mu_b[i];
    const double cov = e_ab[i] - mu_a[i] * mu_b[i];
    acc += ((2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2)) /
           ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
  }
  return acc / static_cast<double>(mu_a.size());
}

PerImage ssim(const TensorF& x, const TensorF& x_hat) {
  check_pair(x, x_hat, "ssim");
  if (x.dim(1) != 3) throw ShapeError("ssim: expected RGB images");
  const std::int64_t n = x.dim(0);
  const int h = static_cast<int>(x.dim(2)), w = static_cast<int>(x.dim(3));
  PerImage out;
  std::vector<double> a(static_cast<std::size_t>(h * w)), b(a.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const auto q = static_cast<std::size_t>(y * w + xx);
        a[q] = 0.299 * unit(x.at(i, 0, y, xx)) + 0.587 * unit(x.at(i, 1, y, xx)) + 0.114 * unit(x.at(i, 2, y, xx));
        b[q] = 0.299 * unit(x_hat.at(i, 0, y, xx)) + 0.587 * unit(x_hat.at(i, 1, y, xx)) +
               0.114 * unit(x_hat.at(i, 2, y, xx));
      }
    const double s = ssim_gray(a, b, h, w);
    out.values.push_back(s);
    out.mean += s;
  }
  out.mean /= static_cast<double>(n);
  return out;
}

// Frechet ---------------------------------------------------------------------

GaussianStats::GaussianStats(int dim)
    : dim_(dim), sum_(Eigen::VectorXd::Zero(dim)), outer_(Eigen::MatrixXd::Zero(dim, dim)) {}

void GaussianStats::add(const double* row) {
  const Eigen::Map<const Eigen::VectorXd> v(row, dim_);
  sum_ += v;
  outer_.noalias() += v * v.transpose();
  ++count_;
}

void GaussianStats::add_rows(const TensorF& rows) {
  if (rows.rank() != 2 || rows.dim(1) != dim_) throw ShapeError("GaussianStats: expected [N, dim] rows");
  std::vector<double> r(static_cast<std::size_t>(dim_));
  for (std::int64_t i = 0; i < rows.dim(0); ++i) {
    for (int j = 0; j < dim_; ++j) r[static_cast<std::size_t>(j)] = rows[static_cast<std::size_t>(i * dim_ + j)];
    add(r.data());
  }
}

void GaussianStats::merge(const GaussianStats& other) {
  if (other.dim_ != dim_) throw ShapeError("GaussianStats: dimension mismatch");
  sum_ += other.sum_;
  outer_ += other.outer_;
  count_ += other.count_;
}

Eigen::VectorXd GaussianStats::mean() const { return sum_ / static_cast<double>(count_); }

Eigen::MatrixXd GaussianStats::covariance() const {
  if (count_ < 2) throw NumericError("GaussianStats: covariance needs at least 2 samples");
  const Eigen::VectorXd mu = mean();
  return (outer_ - static_cast<double>(count_) * mu * mu.transpose()) / static_cast<double>(count_ - 1);
}

double frechet_distance(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                        const Eigen::MatrixXd& cov_b) {
  const Eigen::Index d = mu_a.size();
  if (mu_b.size() != d || cov_a.rows() != d || cov_b.rows() != d) throw ShapeError("frechet_distance: dimension mismatch");
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = 0.5 * (cov_a + cov_a.transpose()) + kFrechetRegularization * eye;
  const Eigen::MatrixXd sb = 0.5 * (cov_b + cov_b.transpose()) + kFrechetRegularization * eye;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(sa);
  Eigen::VectorXd la = ea.eigenvalues();
  for (Eigen::Index i = 0; i < d; ++i) {
    if (la(i) < -1e-6) throw NumericError("frechet_distance: covariance is not positive semidefinite");
    la(i) = std::sqrt(std::max(0.0, la(i)));
  }
  const Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Eigen::MatrixXd prod = sqrt_a * sb * sqrt_a;
  prod = 0.5 * (prod + prod.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(prod, Eigen::EigenvaluesOnly);
  double tr_sqrt = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double l = ep.eigenvalues()(i);
    if (l < -1e-6) throw NumericError("frechet_distance: negative eigenvalue " + std::to_string(l) + " in covariance product");
    tr_sqrt += std::sqrt(std::max(0.0, l));
  }
  return (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
}

double frechet_feature_distance(const TensorF& set_a, const TensorF& set_b, const FeatureNetConfig& cfg,
                                const ModelParams<float>& feat_params) {
  if (set_a.dim(0) < 2 || set_b.dim(0) < 2) throw ConfigError("frechet_feature_distance: need >= 2 images per set");
  const int dim = cfg.channels.back();
  GaussianStats a(dim), b(dim);
  // Embed in chunks to bound activation memory.
  constexpr std::int64_t kChunk = 64;
  for (auto [set, stats] : {std::pair{&set_a, &a}, std::pair{&set_b, &b}}) {
    const std::int64_t n = set->dim(0), per = set->dim(1) * set->dim(2) * set->dim(3);
    for (std::int64_t s = 0; s < n; s += kChunk) {
      const std::int64_t m = std::min(kChunk, n - s);
      std::vector<float> chunk(set->data() + s * per, set->data() + (s + m) * per);
      TensorF batch(Shape{m, set->dim(1), set->dim(2), set->dim(3)}, std::move(chunk));
      stats->add_rows(feature_embedding(batch, cfg, feat_params));
    }
  }
  return frechet_distance(a.mean(), a.covariance(), b.mean(), b.covariance());
}

// Latent analysis ---------------------------------------------------------------

double latent_total_variation(const TensorF& z) {
  if (z.rank() != 4 || z.dim(2) < 2 || z.dim(3) < 2)
    throw ShapeError("latent_total_variation: need [N,C,h,w] with h, w >= 2, got " + shape_str(z.shape()));
  const std::int64_t n = z.dim(0), c = z.dim(1), h = z.dim(2), w = z.dim(3);
  constexpr double kEps = 1e-8;
  double total = 0;
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0, sq = 0;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) sum += z.at(i, ch, y, x);
    const double cnt = static_cast<double>(n * h * w);
    const double mu = sum / cnt;
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) sq += (z.at(i, ch, y, x) - mu) * (z.at(i, ch, y, x) - mu);
    const double sd = std::sqrt(sq / cnt) + kEps;
    for (std::int64_t i = 0; i < n; ++i) {
      double dv = 0, dh = 0;
      for (std::int64_t y = 0; y + 1 < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) dv += std::abs(static_cast<double>(z.at(i, ch, y + 1, x)) - z.at(i, ch, y, x));
      for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x + 1 < w; ++x) dh += std::abs(static_cast<double>(z.at(i, ch, y, x + 1)) - z.at(i, ch, y, x));
      total += (dv / static_cast<double>((h - 1) * w) + dh / static_cast<double>(h * (w - 1))) / sd;
    }
  }
  return total / static_cast<double>(n * c);
}

LatentProjection fit_latent_projection(const std::vector<const TensorF*>& z_sets) {
  if (z_sets.empty()) throw ConfigError("latent projection: no latents");
  const std::int64_t c = z_sets.front()->dim(1);
  std::int64_t count = 0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(c);
  Eigen::MatrixXd outer = Eigen::MatrixXd::Zero(c, c);
  std::int64_t latents = 0;
  for (const TensorF* z : z_sets) {
    if (z->rank() != 4 || z->dim(1) != c) throw ShapeError("latent projection: channel count differs between sets");
    latents += z->dim(0);
    Eigen::VectorXd v(c);
    for (std::int64_t i = 0; i < z->dim(0); ++i)
      for (std::int64_t y = 0; y < z->dim(2); ++y)
        for (std::int64_t x = 0; x < z->dim(3); ++x) {
          for (std::int64_t ch = 0; ch < c; ++ch) v(ch) = z->at(i, ch, y, x);
          sum += v;
          outer.noalias() += v * v.transpose();
          ++count;
        }
  }
  if (latents < 8) throw ConfigError("latent projection: need at least 8 latents to fit");
  LatentProjection p;
  p.mean = sum / static_cast<double>(count);
  const Eigen::MatrixXd cov = outer / static_cast<double>(count) - p.mean * p.mean.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
  p.basis = Eigen::MatrixXd::Zero(3, c);
  for (int k = 0; k < 3 && k < c; ++k) {
    Eigen::VectorXd v = es.eigenvectors().col(c - 1 - k);  // eigenvalues ascend
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    p.basis.row(k) = v.transpose();
  }
  p.lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  p.hi = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());
  for (const TensorF* z : z_sets) {
    const TensorF s = project_latents(p, *z);
    for (std::int64_t i = 0; i < s.dim(0); ++i)
      for (int k = 0; k < 3; ++k)
        for (std::int64_t q = 0; q < s.dim(2) * s.dim(3); ++q) {
          const double v = s[static_cast<std::size_t>((i * 3 + k) * s.dim(2) * s.dim(3) + q)];
          p.lo(k) = std::min(p.lo(k), v);
          p.hi(k) = std::max(p.hi(k), v);
        }
  }
  return p;
}

TensorF project_latents(const LatentProjection& proj, const TensorF& z) {
  const std::int64_t n = z.dim(0), c = z.dim(1), h = z.dim(2), w = z.dim(3);
  if (c != proj.mean.size()) throw ShapeError("project_latents: channel mismatch");
  TensorF out(Shape{n, 3, h, w});
  Eigen::VectorXd v(c);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        for (std::int64_t ch = 0; ch < c; ++ch) v(ch) = z.at(i, ch, y, x);
        const Eigen::Vector3d s = proj.basis * (v - proj.mean);
        for (int k = 0; k < 3; ++k) out.at(i, k, y, x) = static_cast<float>(s(k));
      }
  return out;
}

TensorF latent_rgb(const LatentProjection& proj, const TensorF& z) {
  TensorF s = project_latents(proj, z);
  const std::int64_t hw = s.dim(2) * s.dim(3);
  for (std::int64_t i = 0; i < s.dim(0); ++i)
    for (int k = 0; k < 3; ++k) {
      const double range = proj.hi(k) - proj.lo(k);
      for (std::int64_t q = 0; q < hw; ++q) {
        float& v = s[static_cast<std::size_t>((i * 3 + k) * hw + q)];
        v = range > 1e-12 ? static_cast<float>(std::clamp((v - proj.lo(k)) / range, 0.0, 1.0)) : 0.5f;
      }
    }
  return s;
}

TensorF latent_rgb_projection(const TensorF& z_set) {
  return latent_rgb(fit_latent_projection({&z_set}), z_set);
}

}  // namespace dgae
