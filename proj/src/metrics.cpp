#include "cinegen/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "cinegen/rng.hpp"

namespace cinegen {

MeanStd mean_std(std::span<const double> v) {
  MeanStd r;
  if (v.empty()) return r;
  for (double x : v) r.mean += x;
  r.mean /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(s / static_cast<double>(v.size()));
  return r;
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable filtering of a row-major h×w image.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w,
                                 const std::array<double, kWin>& g) {
  const int oh = h - kWin + 1, ow = w - kWin + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k)
        s += g[static_cast<std::size_t>(k)] * img[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k)
        s += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace

double ssim(std::span<const double> a, std::span<const double> b, int h, int w,
            double data_range) {
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("ssim: image shapes differ");
  if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data_range must be > 0");
  if (h < kWin || w < kWin) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  static const auto g = gaussian_window();
  const std::size_t n = a.size();
  std::vector<double> va(a.begin(), a.end()), vb(b.begin(), b.end()), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = va[i] * va[i];
    bb[i] = vb[i] * vb[i];
    ab[i] = va[i] * vb[i];
  }
  const auto mu_a = filter_valid(va, h, w, g);
  const auto mu_b = filter_valid(vb, h, w, g);
  const auto e_aa = filter_valid(aa, h, w, g);
  const auto e_bb = filter_valid(bb, h, w, g);
  const auto e_ab = filter_valid(ab, h, w, g);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double sum = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double sa = e_aa[i] - ma * ma;
    const double sb = e_bb[i] - mb * mb;
    const double sab = e_ab[i] - ma * mb;
    sum += ((2.0 * ma * mb + c1) * (2.0 * sab + c2)) /
           ((ma * ma + mb * mb + c1) * (sa + sb + c2));
  }
  return sum / static_cast<double>(mu_a.size());
}

std::vector<double> d_ssim_values(const Volume4D& v, double data_range) {
  const Dims4 d = v.dims();
  if (d.d < 2) throw std::invalid_argument("d_ssim needs at least two depth slices");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(d.d - 1) * d.t);
  for (int t = 0; t < d.t; ++t)
    for (int s = 0; s + 1 < d.d; ++s)
      out.push_back(ssim(v.frame_image(s, t), v.frame_image(s + 1, t), d.h, d.w, data_range));
  return out;
}

MeanStd d_ssim(const Volume4D& v, double data_range) {
  const auto vals = d_ssim_values(v, data_range);
  return mean_std(vals);
}

std::optional<Point2> center_of_mass(std::span<const double> mask, int h, int w) {
  if (mask.size() != static_cast<std::size_t>(h) * w)
    throw std::invalid_argument("center_of_mass: mask shape mismatch");
  double m = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = mask[static_cast<std::size_t>(y) * w + x];
      m += v;
      sx += v * x;
      sy += v * y;
    }
  if (m <= 0.0) return std::nullopt;
  return Point2{sx / m, sy / m};
}

double ar_ed_from_centers(std::span<const std::optional<Point2>> centers) {
  std::vector<double> s, xs, ys;
  for (std::size_t i = 0; i < centers.size(); ++i)
    if (centers[i]) {
      s.push_back(static_cast<double>(i));
      xs.push_back(centers[i]->x);
      ys.push_back(centers[i]->y);
    }
  const std::size_t n = s.size();
  if (n < 3) throw std::invalid_argument("ar_ed needs at least 3 slices with a segmentation");
  const double ms = std::accumulate(s.begin(), s.end(), 0.0) / n;
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sss = 0.0, ssx = 0.0, ssy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sss += (s[i] - ms) * (s[i] - ms);
    ssx += (s[i] - ms) * (xs[i] - mx);
    ssy += (s[i] - ms) * (ys[i] - my);
  }
  const double bx = ssx / sss, by = ssy / sss;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double rx = xs[i] - (mx + bx * (s[i] - ms));
    const double ry = ys[i] - (my + by * (s[i] - ms));
    total += std::hypot(rx, ry);
  }
  return total / static_cast<double>(n);
}

double ar_ed(const Volume4D& mask, int frame) {
  const Dims4 d = mask.dims();
  if (frame < 0 || frame >= d.t) throw std::out_of_range("ar_ed: frame out of range");
  std::vector<std::optional<Point2>> centers;
  for (int s = 0; s < d.d; ++s) centers.push_back(center_of_mass(mask.frame_image(s, frame), d.h, d.w));
  return ar_ed_from_centers(centers);
}

std::vector<double> lv_volume_curve(const Volume4D& mask) {
  if (mask.kind() != VolumeKind::mask) throw std::invalid_argument("volume curve needs a mask");
  const Dims4 d = mask.dims();
  const Spacing sp = mask.spacing();
  const double voxel_ml = sp.d * sp.h * sp.w / 1000.0;
  std::vector<std::size_t> counts(static_cast<std::size_t>(d.t), 0);
  const auto data = mask.data();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i] != 0.0F) ++counts[i % static_cast<std::size_t>(d.t)];
  std::vector<double> v(counts.size());
  for (std::size_t t = 0; t < counts.size(); ++t) v[t] = static_cast<double>(counts[t]) * voxel_ml;
  return v;
}

double ef(std::span<const double> curve) {
  if (curve.empty()) throw std::invalid_argument("ef: empty curve");
  const auto [mn, mx] = std::minmax_element(curve.begin(), curve.end());
  if (!(*mx > 0.0)) throw std::invalid_argument("ef: all-zero volume curve");
  return (*mx - *mn) / *mx;
}

int ed_frame(std::span<const double> curve) {
  if (curve.empty()) throw std::invalid_argument("ed_frame: empty curve");
  return static_cast<int>(std::max_element(curve.begin(), curve.end()) - curve.begin());
}

std::vector<double> normalize_curve(std::span<const double> curve, int t_out) {
  if (t_out < 1) throw std::invalid_argument("normalize_curve: t_out must be >= 1");
  if (curve.empty()) throw std::invalid_argument("normalize_curve: empty curve");
  const auto [mn, mx] = std::minmax_element(curve.begin(), curve.end());
  if (!(*mx > *mn)) throw std::invalid_argument("normalize_curve: constant curve");
  const std::size_t n = curve.size();
  // First occurrence of the maximum (minmax_element reports the last one).
  const auto first_max = std::max_element(curve.begin(), curve.end());
  const std::size_t shift = static_cast<std::size_t>(first_max - curve.begin());
  const double peak = *first_max;
  std::vector<double> out(static_cast<std::size_t>(t_out));
  for (int i = 0; i < t_out; ++i) {
    const double pos = static_cast<double>(i) * n / t_out;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - lo;
    const double a = curve[(lo + shift) % n];
    const double b = curve[(lo + 1 + shift) % n];
    out[static_cast<std::size_t>(i)] = ((1.0 - frac) * a + frac * b) / peak;
  }
  return out;
}

double w2_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("w2_1d: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const std::size_t m = std::max(sa.size(), sb.size());
  auto quantile = [](const std::vector<double>& s, double q) {
    auto idx = static_cast<std::ptrdiff_t>(std::ceil(q * static_cast<double>(s.size()))) - 1;
    idx = std::clamp<std::ptrdiff_t>(idx, 0, static_cast<std::ptrdiff_t>(s.size()) - 1);
    return s[static_cast<std::size_t>(idx)];
  };
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(m);
    const double d = quantile(sa, q) - quantile(sb, q);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(m));
}

void FeatureSet::add(std::span<const double> f) {
  if (dim == 0) dim = f.size();
  if (f.size() != dim || dim == 0) throw std::invalid_argument("feature dimension mismatch");
  for (double v : f)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
  values.insert(values.end(), f.begin(), f.end());
}

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat as_matrix(const FeatureSet& f) {
  Mat m(static_cast<Eigen::Index>(f.size()), static_cast<Eigen::Index>(f.dim));
  std::copy(f.values.begin(), f.values.end(), m.data());
  return m;
}

void check_features(const FeatureSet& f, const char* what) {
  if (f.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least 2 samples");
  for (double v : f.values)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite features");
}

// Symmetric PSD square root with negative eigenvalues clipped to 0.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const FeatureSet& a, const FeatureSet& b, double eps) {
  check_features(a, "frechet_distance");
  check_features(b, "frechet_distance");
  if (a.dim != b.dim) throw std::invalid_argument("frechet_distance: feature dims differ");
  const Mat A = as_matrix(a), B = as_matrix(b);
  const Eigen::RowVectorXd mu_a = A.colwise().mean(), mu_b = B.colwise().mean();
  const Mat Ac = A.rowwise() - mu_a;
  const Mat Bc = B.rowwise() - mu_b;
  const double na = static_cast<double>(a.size()) - 1.0;
  const double nb = static_cast<double>(b.size()) - 1.0;
  const double mean_term = (mu_a - mu_b).squaredNorm();

  if (a.size() < a.dim || b.size() < b.dim) {
    // tr((ΣaΣb)^½) = ‖Ac·Bcᵀ‖_* / sqrt(na·nb): ΣaΣb shares its non-zero spectrum
    // with (Ac Bcᵀ)(Bc Acᵀ)/(na·nb).
    const Eigen::MatrixXd cross = Ac * Bc.transpose();
    Eigen::BDCSVD<Eigen::MatrixXd> svd(cross);
    const double nuclear = svd.singularValues().sum();
    const double tr_a = Ac.squaredNorm() / na;
    const double tr_b = Bc.squaredNorm() / nb;
    return std::max(0.0, mean_term + tr_a + tr_b - 2.0 * nuclear / std::sqrt(na * nb));
  }

  Eigen::MatrixXd sa = (Ac.transpose() * Ac) / na;
  Eigen::MatrixXd sb = (Bc.transpose() * Bc) / nb;
  sa.diagonal().array() += eps;
  sb.diagonal().array() += eps;
  const Eigen::MatrixXd root_a = sqrt_psd(sa);
  const Eigen::MatrixXd inner = root_a * sb * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::max(0.0, mean_term + sa.trace() + sb.trace() - 2.0 * tr_sqrt);
}

namespace {

// Pairwise Euclidean distances, rows of x against rows of y.
std::vector<double> distances(const FeatureSet& x, const FeatureSet& y) {
  const std::size_t nx = x.size(), ny = y.size(), dim = x.dim;
  std::vector<double> d(nx * ny);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(nx); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t j = 0; j < ny; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double e = x.values[i * dim + k] - y.values[j * dim + k];
        s += e * e;
      }
      d[i * ny + j] = std::sqrt(s);
    }
  }
  return d;
}

// Sorted distances from each point to the other points of its own set.
std::vector<std::vector<double>> sorted_self(const FeatureSet& x) {
  const std::size_t n = x.size();
  const auto d = distances(x, x);
  std::vector<std::vector<double>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) out[i].push_back(d[i * n + j]);
    std::sort(out[i].begin(), out[i].end());
  }
  return out;
}

// Fraction of `probe` rows inside some ball of `manifold`. cross[p·m + j] is the
// distance from probe p to manifold point j.
double coverage(const std::vector<double>& cross, std::size_t np, std::size_t nm,
                const std::vector<std::vector<double>>& knn, int k) {
  std::size_t inside = 0;
  for (std::size_t p = 0; p < np; ++p)
    for (std::size_t j = 0; j < nm; ++j)
      if (cross[p * nm + j] <= knn[j][static_cast<std::size_t>(k) - 1]) {
        ++inside;
        break;
      }
  return static_cast<double>(inside) / static_cast<double>(np);
}

struct PrTables {
  std::vector<std::vector<double>> knn_real, knn_gen;
  std::vector<double> gen_to_real, real_to_gen;
};

PrTables pr_tables(const FeatureSet& real, const FeatureSet& gen) {
  if (real.dim != gen.dim) throw std::invalid_argument("precision_recall: feature dims differ");
  PrTables t;
  t.knn_real = sorted_self(real);
  t.knn_gen = sorted_self(gen);
  t.gen_to_real = distances(gen, real);
  t.real_to_gen = distances(real, gen);
  return t;
}

}  // namespace

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& gen, int k) {
  if (k < 1) throw std::invalid_argument("precision_recall: k must be >= 1");
  if (real.size() <= static_cast<std::size_t>(k) || gen.size() <= static_cast<std::size_t>(k))
    throw std::invalid_argument("precision_recall: both sets need more than k samples");
  const auto t = pr_tables(real, gen);
  return {coverage(t.gen_to_real, gen.size(), real.size(), t.knn_real, k),
          coverage(t.real_to_gen, real.size(), gen.size(), t.knn_gen, k)};
}

KSelection select_k_halves(const FeatureSet& a, const FeatureSet& b, double threshold) {
  const std::size_t n = std::min(a.size(), b.size());
  if (n < 2) throw std::invalid_argument("select_k: halves need at least 2 samples");
  const int cap = static_cast<int>(n) - 1;
  const auto t = pr_tables(a, b);
  KSelection sel;
  for (int k = 1; k <= cap; ++k) {
    const double p = coverage(t.gen_to_real, b.size(), a.size(), t.knn_real, k);
    const double r = coverage(t.real_to_gen, a.size(), b.size(), t.knn_gen, k);
    sel = {k, p >= threshold && r >= threshold, p, r};
    if (sel.satisfied) return sel;
  }
  return sel;
}

KSelection select_k(const FeatureSet& real, double threshold, std::uint64_t seed) {
  const std::size_t n = real.size();
  if (n < 8) throw std::invalid_argument("select_k needs at least 8 samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Stream rng({seed, 0x6b73656cULL});
  std::shuffle(order.begin(), order.end(), rng.engine());
  FeatureSet a{real.extractor, real.dim, {}}, b{real.extractor, real.dim, {}};
  for (std::size_t i = 0; i < n; ++i) (i < n / 2 ? a : b).add(real.row(order[i]));
  return select_k_halves(a, b, threshold);
}

std::vector<double> identity_pool_features(const Volume4D& v) {
  const Dims4 in = v.dims();
  const Dims4 out = kIdentityPoolGrid;
  auto bins = [](int n, int m) {
    std::vector<std::pair<int, int>> r(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      const int lo = static_cast<int>(static_cast<long long>(i) * n / m);
      const int hi = std::max(lo + 1, static_cast<int>(static_cast<long long>(i + 1) * n / m));
      r[static_cast<std::size_t>(i)] = {lo, hi};
    }
    return r;
  };
  const auto bd = bins(in.d, out.d), bh = bins(in.h, out.h), bw = bins(in.w, out.w),
             bt = bins(in.t, out.t);
  std::vector<double> f(out.count());
  std::size_t o = 0;
  for (const auto& [d0, d1] : bd)
    for (const auto& [h0, h1] : bh)
      for (const auto& [w0, w1] : bw)
        for (const auto& [t0, t1] : bt) {
          double s = 0.0;
          for (int d = d0; d < d1; ++d)
            for (int h = h0; h < h1; ++h)
              for (int w = w0; w < w1; ++w)
                for (int t = t0; t < t1; ++t) s += v.at(d, h, w, t);
          f[o++] = s / static_cast<double>((d1 - d0) * (h1 - h0) * (w1 - w0) * (t1 - t0));
        }
  return f;
}

Volume4D threshold_mask(const Volume4D& image, double threshold) {
  std::vector<float> m(image.data().size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = image.data()[i] > threshold ? 1.0F : 0.0F;
  return Volume4D(image.dims(), image.spacing(), VolumeKind::mask, std::move(m));
}

}  // namespace cinegen
