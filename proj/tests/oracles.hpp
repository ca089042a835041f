// SPDX-License-Identifier: Apache-2.0
//
// Reference implementations written directly from the defining formulas with
// plain loops in double precision. They share no code with the library.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <vector>

namespace dgae::oracle {

/// Mean over batch of 0.5 * sum(mu^2 + exp(lv) - 1 - lv).
inline double kl(const std::vector<double>& mu, const std::vector<double>& lv, int batch) {
  double s = 0;
  for (std::size_t i = 0; i < mu.size(); ++i) s += 0.5 * (mu[i] * mu[i] + std::exp(lv[i]) - 1.0 - lv[i]);
  return s / batch;
}

/// Element mean of squared differences.
inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// Per-sample element mean of (v - (eps - x0))^2 weighted by w_n, then batch mean.
inline double dsm(const std::vector<double>& v, const std::vector<double>& x0, const std::vector<double>& eps,
                  const std::vector<double>& w, int batch) {
  const std::size_t per = v.size() / static_cast<std::size_t>(batch);
  double total = 0;
  for (int n = 0; n < batch; ++n) {
    double s = 0;
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t i = static_cast<std::size_t>(n) * per + k;
      const double r = v[i] - (eps[i] - x0[i]);
      s += r * r;
    }
    total += w[static_cast<std::size_t>(n)] * s / static_cast<double>(per);
  }
  return total / batch;
}

/// Hinge losses from their definitions.
inline std::array<double, 2> hinge(const std::vector<double>& real, const std::vector<double>& fake) {
  double d_real = 0, d_fake = 0, g = 0;
  for (double r : real) d_real += std::max(0.0, 1.0 - r);
  for (double f : fake) {
    d_fake += std::max(0.0, 1.0 + f);
    g -= f;
  }
  const auto nr = static_cast<double>(real.size()), nf = static_cast<double>(fake.size());
  return {d_real / nr + d_fake / nf, g / nf};
}

/// Per-image PSNR on [-1,1] inputs rescaled to [0,1], capped at 100 dB.
inline std::vector<double> psnr(const std::vector<double>& a, const std::vector<double>& b, int batch) {
  const std::size_t per = a.size() / static_cast<std::size_t>(batch);
  std::vector<double> out;
  for (int n = 0; n < batch; ++n) {
    double s = 0;
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t i = static_cast<std::size_t>(n) * per + k;
      const double d = (a[i] + 1) / 2 - (b[i] + 1) / 2;
      s += d * d;
    }
    const double m = s / static_cast<double>(per);
    out.push_back(m <= 0 ? 100.0 : std::min(100.0, 10.0 * std::log10(1.0 / m)));
  }
  return out;
}

/// Each channel divided by sqrt(sum of squares over space + eps), then mean squared
/// difference. One feature depth; Maps are [N, C, H, W] flattened.
inline double normalized_feature_mse(const std::vector<double>& fa, const std::vector<double>& fb, int n, int c,
                                     int hw, double eps = 1e-10) {
  double s = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * static_cast<std::size_t>(hw);
      double na = 0, nb = 0;
      for (int k = 0; k < hw; ++k) {
        na += fa[base + k] * fa[base + k];
        nb += fb[base + k] * fb[base + k];
      }
      na = std::sqrt(na + eps);
      nb = std::sqrt(nb + eps);
      for (int k = 0; k < hw; ++k) {
        const double d = fa[base + k] / na - fb[base + k] / nb;
        s += d * d;
      }
    }
  return s / (static_cast<double>(n) * c * hw);
}

/// SSIM of two [h, w] images in [0,1] from the definition: a full 2-D 11x11 Gaussian
/// window (sigma 1.5, normalized) at every valid position, weighted local statistics.
inline double ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w) {
  constexpr int k = 11;
  constexpr double sigma = 1.5;
  double win[k][k];
  double total = 0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double di = i - 5, dj = j - 5;
      win[i][j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      total += win[i][j];
    }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double sum = 0;
  int count = 0;
  for (int y = 0; y + k <= h; ++y)
    for (int x = 0; x + k <= w; ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double wt = win[i][j] / total;
          ma += wt * a[(y + i) * w + x + j];
          mb += wt * b[(y + i) * w + x + j];
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double wt = win[i][j] / total;
          const double da = a[(y + i) * w + x + j] - ma, db = b[(y + i) * w + x + j] - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      sum += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  return sum / count;
}

/// Mean over (n, c) of mean |vertical diff| + mean |horizontal diff| of per-channel
/// population-standardized values (sd + 1e-8).
inline double total_variation(const std::vector<double>& z, int n, int c, int h, int w) {
  std::vector<double> s(z.size());
  for (int ch = 0; ch < c; ++ch) {
    double m = 0, cnt = 0;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < h * w; ++k) {
        m += z[(static_cast<std::size_t>(i) * c + ch) * h * w + k];
        ++cnt;
      }
    m /= cnt;
    double var = 0;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < h * w; ++k) {
        const double d = z[(static_cast<std::size_t>(i) * c + ch) * h * w + k] - m;
        var += d * d;
      }
    const double sd = std::sqrt(var / cnt) + 1e-8;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < h * w; ++k) {
        const std::size_t idx = (static_cast<std::size_t>(i) * c + ch) * h * w + k;
        s[idx] = (z[idx] - m) / sd;
      }
  }
  double total = 0;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * h * w;
      double v = 0, hz = 0;
      for (int y = 0; y + 1 < h; ++y)
        for (int x = 0; x < w; ++x) v += std::abs(s[base + (y + 1) * w + x] - s[base + y * w + x]);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x + 1 < w; ++x) hz += std::abs(s[base + y * w + x + 1] - s[base + y * w + x]);
      total += v / ((h - 1) * w) + hz / (h * (w - 1));
    }
  return total / (n * c);
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major n x n).
/// Returns eigenvalues descending and matching eigenvectors as rows.
inline void jacobi_eigen(std::vector<double> a, int n, std::vector<double>& values,
                         std::vector<std::vector<double>>& vectors) {
  std::vector<double> v(static_cast<std::size_t>(n * n), 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) {
        if (std::abs(a[p * n + q]) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * a[p * n + q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return a[x * n + x] > a[y * n + y]; });
  values.clear();
  vectors.clear();
  for (int i : order) {
    values.push_back(a[i * n + i]);
    std::vector<double> col(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) col[k] = v[k * n + i];
    vectors.push_back(col);
  }
}

/// Top-3 principal component scores of channel vectors: z is [N, C, H, W] flattened;
/// returns scores [N, 3, H, W] flattened (zero components when C < 3).
inline std::vector<double> pca_scores(const std::vector<double>& z, int n, int c, int hw) {
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  const double count = static_cast<double>(n) * hw;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch)
      for (int k = 0; k < hw; ++k) mean[ch] += z[(static_cast<std::size_t>(i) * c + ch) * hw + k];
  for (auto& m : mean) m /= count;
  std::vector<double> cov(static_cast<std::size_t>(c * c), 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < hw; ++k)
      for (int p = 0; p < c; ++p)
        for (int q = 0; q < c; ++q)
          cov[p * c + q] += (z[(static_cast<std::size_t>(i) * c + p) * hw + k] - mean[p]) *
                            (z[(static_cast<std::size_t>(i) * c + q) * hw + k] - mean[q]);
  for (auto& v : cov) v /= count - 1;
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
  jacobi_eigen(cov, c, values, vectors);
  std::vector<double> out(static_cast<std::size_t>(n) * 3 * hw, 0.0);
  for (int comp = 0; comp < std::min(3, c); ++comp)
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < hw; ++k) {
        double s = 0;
        for (int ch = 0; ch < c; ++ch)
          s += vectors[comp][ch] * (z[(static_cast<std::size_t>(i) * c + ch) * hw + k] - mean[ch]);
        out[(static_cast<std::size_t>(i) * 3 + comp) * hw + k] = s;
      }
  return out;
}

/// Frechet distance between 1-D Gaussians.
inline double frechet_1d(double mu1, double s1, double mu2, double s2) {
  return (mu1 - mu2) * (mu1 - mu2) + s1 * s1 + s2 * s2 - 2 * s1 * s2;
}

/// E_{z~N(m, s^2)} log N(x; a z + b, 1) for scalar x.
inline double expected_gaussian_loglik(double x, double m, double s, double a, double b) {
  const double r = x - a * m - b;
  return -0.5 * std::log(2 * std::numbers::pi) - 0.5 * (r * r + a * a * s * s);
}

}  // namespace dgae::oracle
