#include "cinegen/vq.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "cinegen/container.hpp"
#include "cinegen/json_fields.hpp"
#include "cinegen/rng.hpp"

namespace cinegen {

using nlohmann::json;

void VqConfig::validate() const {
  if (f < 1 || (f & (f - 1)) != 0) throw std::invalid_argument("vq f must be a power of two");
  if (codebook_size < 2) throw std::invalid_argument("codebook_size must be >= 2");
  if (emb < 1) throw std::invalid_argument("emb must be >= 1");
  if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (widths.empty()) throw std::invalid_argument("widths must not be empty");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("widths must be positive");
}

int VqConfig::levels() const {
  int l = 0;
  while ((1 << l) < f) ++l;
  return l;
}

int VqConfig::width(int level) const {
  return widths[static_cast<std::size_t>(std::min<int>(level, static_cast<int>(widths.size()) - 1))];
}

json to_json(const VqConfig& c) {
  return json{{"f", c.f},           {"codebook_size", c.codebook_size},
              {"emb", c.emb},       {"beta", c.beta},
              {"epochs", c.epochs}, {"lr", c.lr},
              {"batch_size", c.batch_size}, {"widths", c.widths},
              {"seed", c.seed}};
}

VqConfig vq_config_from_json(const json& j, std::vector<std::string>& problems,
                             const std::string& prefix) {
  VqConfig c;
  FieldReader r(j, problems, prefix);
  r.read("f", c.f);
  r.read("codebook_size", c.codebook_size);
  r.read("emb", c.emb);
  r.read("beta", c.beta);
  r.read("epochs", c.epochs);
  r.read("lr", c.lr);
  r.read("batch_size", c.batch_size);
  r.read("widths", c.widths);
  r.read("seed", c.seed);
  return c;
}

template <typename T>
QuantizeResult<T> vq_quantize(std::span<const T> z_e, std::span<const T> codebook, int emb,
                              std::span<T> z_q) {
  if (emb < 1) throw std::invalid_argument("emb must be >= 1");
  const auto e = static_cast<std::size_t>(emb);
  if (codebook.empty() || codebook.size() % e != 0)
    throw std::invalid_argument("empty or malformed codebook");
  if (z_e.size() % e != 0 || z_q.size() != z_e.size())
    throw std::invalid_argument("activation channel dim does not match emb");
  const std::size_t k_count = codebook.size() / e;
  const std::size_t npos = z_e.size() / e;
  QuantizeResult<T> res;
  res.indices.assign(npos, 0);
  std::vector<double> dist(npos, 0.0);
#pragma omp parallel for schedule(static) if (npos * k_count > 16384)
  for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(npos); ++pi) {
    const auto p = static_cast<std::size_t>(pi);
    const T* z = z_e.data() + p * e;
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
      const T* c = codebook.data() + k * e;
      double d = 0.0;
      for (std::size_t j = 0; j < e; ++j) {
        const double diff = static_cast<double>(z[j]) - c[j];
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        arg = k;
      }
    }
    res.indices[p] = static_cast<int>(arg);
    dist[p] = best;
    std::copy(codebook.data() + arg * e, codebook.data() + (arg + 1) * e, z_q.data() + p * e);
  }
  double sum = 0.0;
  for (double d : dist) sum += d;
  // Both terms have the same value; they differ only in which side is gradient-stopped.
  res.codebook_loss = npos > 0 ? sum / static_cast<double>(npos) : 0.0;
  res.commitment_loss = res.codebook_loss;
  return res;
}

template QuantizeResult<float> vq_quantize<float>(std::span<const float>, std::span<const float>,
                                                  int, std::span<float>);
template QuantizeResult<double> vq_quantize<double>(std::span<const double>,
                                                    std::span<const double>, int,
                                                    std::span<double>);

namespace {

template <typename T>
T silu(T x) {
  return x / (T(1) + std::exp(-x));
}

template <typename T>
T silu_grad(T x) {
  const T s = T(1) / (T(1) + std::exp(-x));
  return s * (T(1) + x * (T(1) - s));
}

kernels::ConvGeometry geometry(int cin, int cout, int k, int stride, const SliceDims& d) {
  kernels::ConvGeometry g;
  g.in_channels = cin;
  g.out_channels = cout;
  g.kernel = k;
  g.stride = stride;
  g.pad = k / 2;
  g.in_x = d.h;
  g.in_y = d.w;
  g.in_z = d.t;
  return g;
}

// [rows × cols] → [cols × rows]
template <typename T>
void to_transposed(std::size_t rows, std::size_t cols, std::span<const T> in, std::vector<T>& out) {
  out.resize(rows * cols);
  kernels::transpose(rows, cols, in.data(), out.data());
}

}  // namespace

template <typename T>
void VqModel<T>::add_conv(std::vector<Layer>& stack, const std::string& name, int cin, int cout,
                          int k, int stride, bool act) {
  Layer l;
  l.cin = cin;
  l.cout = cout;
  l.kernel = k;
  l.stride = stride;
  l.act = act;
  l.w = params_.add(name + ".weight", {cout, cin * k * k * k});
  l.b = params_.add(name + ".bias", {cout});
  stack.push_back(l);
}

template <typename T>
void VqModel<T>::add_up(std::vector<Layer>& stack, const std::string& name, int cin, int cout,
                        bool act) {
  Layer l;
  l.up = true;
  l.cin = cin;
  l.cout = cout;
  l.kernel = 2;
  l.stride = 2;
  l.act = act;
  l.w = params_.add(name + ".weight", {cout * 8, cin});
  l.b = params_.add(name + ".bias", {cout});
  stack.push_back(l);
}

template <typename T>
VqModel<T>::VqModel(const VqConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int L = cfg_.levels();
  add_conv(enc_, "enc.in", 1, cfg_.width(0), 3, 1, true);
  for (int i = 0; i < L; ++i)
    add_conv(enc_, "enc.down" + std::to_string(i), cfg_.width(i), cfg_.width(i + 1), 3, 2, true);
  add_conv(enc_, "enc.out", cfg_.width(L), cfg_.emb, 1, 1, false);

  add_conv(dec_, "dec.in", cfg_.emb, cfg_.width(L), 3, 1, true);
  for (int i = L - 1; i >= 0; --i) {
    add_up(dec_, "dec.up" + std::to_string(i), cfg_.width(i + 1), cfg_.width(i), true);
    if (i > 0)
      add_conv(dec_, "dec.refine" + std::to_string(i), cfg_.width(i), cfg_.width(i), 3, 1, true);
  }
  add_conv(dec_, "dec.out", cfg_.width(0), 1, 3, 1, false);
  codebook_offset_ = params_.add("codebook", {cfg_.codebook_size, cfg_.emb});
}

template <typename T>
void VqModel<T>::init(std::uint64_t seed) {
  Stream rng({seed, 0x7671ULL});
  T* P = params_.data();
  std::fill(P, P + params_.size(), T(0));
  for (const auto* stack : {&enc_, &dec_})
    for (const auto& l : *stack) {
      const int fan_in = l.up ? l.cin : l.cin * l.kernel * l.kernel * l.kernel;
      const double bound = std::sqrt(6.0 / fan_in);
      const std::size_t n = l.up ? static_cast<std::size_t>(l.cout) * 8 * l.cin
                                 : static_cast<std::size_t>(l.cout) * fan_in;
      for (std::size_t i = 0; i < n; ++i) P[l.w + i] = static_cast<T>(rng.uniform(-bound, bound));
    }
  const double cb = 1.0 / cfg_.codebook_size;
  for (auto& v : codebook()) v = static_cast<T>(rng.uniform(-cb, cb));
}

template <typename T>
std::span<T> VqModel<T>::codebook() {
  return params_.values().subspan(codebook_offset_,
                                  static_cast<std::size_t>(cfg_.codebook_size) * cfg_.emb);
}

template <typename T>
std::span<const T> VqModel<T>::codebook() const {
  return params_.values().subspan(codebook_offset_,
                                  static_cast<std::size_t>(cfg_.codebook_size) * cfg_.emb);
}

template <typename T>
void VqModel<T>::set_range(double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("intensity range must have hi > lo");
  lo_ = lo;
  hi_ = hi;
}

template <typename T>
T VqModel<T>::normalize(T v) const {
  return static_cast<T>(2.0 * (v - lo_) / (hi_ - lo_) - 1.0);
}

template <typename T>
T VqModel<T>::denormalize(T v) const {
  return static_cast<T>((v + 1.0) * 0.5 * (hi_ - lo_) + lo_);
}

template <typename T>
SliceDims VqModel<T>::latent_dims(const SliceDims& s) const {
  const int f = cfg_.f;
  if (s.h % f != 0 || s.w % f != 0 || s.t % f != 0)
    throw std::invalid_argument("slice dims (" + std::to_string(s.h) + "," + std::to_string(s.w) +
                                "," + std::to_string(s.t) + ") not divisible by f=" +
                                std::to_string(f));
  return {s.h / f, s.w / f, s.t / f};
}

template <typename T>
void VqModel<T>::run_forward(const std::vector<Layer>& stack, std::span<const T> in,
                             SliceDims dims, std::vector<Cache>& cache, std::vector<T>& out) const {
  cache.resize(stack.size());
  const T* W = params_.data();
  std::vector<T> cur(in.begin(), in.end());
  for (std::size_t i = 0; i < stack.size(); ++i) {
    const Layer& l = stack[i];
    Cache& c = cache[i];
    c.dims = dims;
    c.in = std::move(cur);
    SliceDims od = dims;
    if (l.up) {
      od = {2 * dims.h, 2 * dims.w, 2 * dims.t};
      c.pre.resize(static_cast<std::size_t>(l.cout) * od.count());
      kernels::upconv2_forward(l.cin, l.cout, dims.h, dims.w, dims.t, c.in.data(), W + l.w,
                               W + l.b, c.pre.data(), c.col);
    } else {
      const auto g = geometry(l.cin, l.cout, l.kernel, l.stride, dims);
      od = {g.out_x(), g.out_y(), g.out_z()};
      c.pre.resize(static_cast<std::size_t>(l.cout) * od.count());
      kernels::conv3d_forward(g, c.in.data(), W + l.w, W + l.b, c.pre.data(), c.col);
    }
    cur = c.pre;
    if (l.act)
      for (auto& v : cur) v = silu(v);
    dims = od;
  }
  out = std::move(cur);
}

template <typename T>
void VqModel<T>::run_backward(const std::vector<Layer>& stack, std::vector<T>& dout,
                              SliceDims /*dims*/, std::vector<Cache>& cache, std::span<T> grad,
                              std::vector<T>* din, VqWorkspace<T>& ws) const {
  const T* W = params_.data();
  const bool param_grads = !grad.empty();
  // Input gradient only: weight terms go to a throwaway buffer.
  if (!param_grads) ws.a.assign(params_.size(), T(0));
  for (std::size_t i = stack.size(); i-- > 0;) {
    const Layer& l = stack[i];
    Cache& c = cache[i];
    if (l.act)
      for (std::size_t k = 0; k < dout.size(); ++k) dout[k] *= silu_grad(c.pre[k]);
    const bool need_in = i > 0 || din != nullptr;
    ws.b.resize(static_cast<std::size_t>(l.cin) * c.dims.count());
    T* gw = param_grads ? grad.data() + l.w : nullptr;
    T* gb = param_grads ? grad.data() + l.b : nullptr;
    if (!param_grads) {
      gw = ws.a.data() + l.w;
      gb = ws.a.data() + l.b;
    }
    if (l.up) {
      kernels::upconv2_backward(l.cin, l.cout, c.dims.h, c.dims.w, c.dims.t, c.in.data(), W + l.w,
                                dout.data(), gw, gb, need_in ? ws.b.data() : nullptr, ws.scratch);
    } else {
      const auto g = geometry(l.cin, l.cout, l.kernel, l.stride, c.dims);
      kernels::conv3d_backward(g, c.col.data(), W + l.w, dout.data(), gw, gb,
                               need_in ? ws.b.data() : nullptr, ws.scratch);
    }
    if (!need_in) break;
    dout.swap(ws.b);
  }
  if (din != nullptr) *din = dout;
}

template <typename T>
void VqModel<T>::encode_slice(std::span<const T> x, const SliceDims& s, std::vector<T>& z_e,
                              VqWorkspace<T>& ws) const {
  if (x.size() != s.count()) throw std::invalid_argument("slice buffer does not match dims");
  const SliceDims ld = latent_dims(s);
  std::vector<T> cf;
  run_forward(enc_, x, s, ws.enc, cf);
  to_transposed<T>(static_cast<std::size_t>(cfg_.emb), ld.count(), cf, z_e);
}

template <typename T>
void VqModel<T>::decode_slice(std::span<const T> z_q, const SliceDims& latent,
                              std::vector<T>& x_hat, VqWorkspace<T>& ws) const {
  if (z_q.size() != latent.count() * static_cast<std::size_t>(cfg_.emb))
    throw std::invalid_argument("latent channel count does not match emb");
  std::vector<T> cf;
  to_transposed<T>(latent.count(), static_cast<std::size_t>(cfg_.emb), z_q, cf);
  run_forward(dec_, cf, latent, ws.dec, x_hat);
}

template <typename T>
double VqModel<T>::st_loss(std::span<const T> x, const SliceDims& s, std::span<const T> z_e,
                           std::span<const T> offset, std::span<const T> z_q0, double* recon,
                           std::vector<T>* dz_e, std::span<T> grad, double grad_scale,
                           VqWorkspace<T>& ws) const {
  const SliceDims ld = latent_dims(s);
  const auto emb = static_cast<std::size_t>(cfg_.emb);
  const std::size_t npos = ld.count();
  const std::size_t n = z_e.size();
  if (n != npos * emb || offset.size() != n || z_q0.size() != n || x.size() != s.count())
    throw std::invalid_argument("st_loss: buffer sizes do not match slice dims");
  ws.z_q.resize(n);
  for (std::size_t i = 0; i < n; ++i) ws.z_q[i] = z_e[i] + offset[i];
  decode_slice(ws.z_q, ld, ws.x_hat, ws);

  const std::size_t nvox = x.size();
  double mse = 0.0;
  for (std::size_t i = 0; i < nvox; ++i) {
    const double d = static_cast<double>(ws.x_hat[i]) - x[i];
    mse += d * d;
  }
  mse /= static_cast<double>(nvox);
  double commit = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(z_e[i]) - z_q0[i];
    commit += d * d;
  }
  commit /= static_cast<double>(npos);
  if (recon != nullptr) *recon = mse;

  if (dz_e != nullptr || !grad.empty()) {
    std::vector<T> dx(nvox);
    const double c = 2.0 * grad_scale / static_cast<double>(nvox);
    for (std::size_t i = 0; i < nvox; ++i)
      dx[i] = static_cast<T>(c * (static_cast<double>(ws.x_hat[i]) - x[i]));
    std::vector<T> dcf;
    run_backward(dec_, dx, ld, ws.dec, grad, &dcf, ws);
    if (dz_e != nullptr) {
      to_transposed<T>(emb, npos, dcf, *dz_e);
      const double cc = 2.0 * grad_scale * cfg_.beta / static_cast<double>(npos);
      for (std::size_t i = 0; i < n; ++i)
        (*dz_e)[i] += static_cast<T>(cc * (static_cast<double>(z_e[i]) - z_q0[i]));
    }
  }
  return mse + cfg_.beta * commit;
}

template <typename T>
typename VqModel<T>::StepStats VqModel<T>::slice_step(std::span<const T> x, const SliceDims& s,
                                                      std::span<T> grad, double grad_scale,
                                                      VqWorkspace<T>& ws) const {
  const auto emb = static_cast<std::size_t>(cfg_.emb);
  encode_slice(x, s, ws.z_e, ws);
  const std::size_t n = ws.z_e.size();
  const std::size_t npos = n / emb;
  std::vector<T> z_q(n);
  auto q = vq_quantize<T>(ws.z_e, codebook(), cfg_.emb, z_q);
  std::vector<T> offset(n);
  for (std::size_t i = 0; i < n; ++i) offset[i] = z_q[i] - ws.z_e[i];

  StepStats st;
  std::vector<T> dz;
  st_loss(x, s, ws.z_e, offset, z_q, &st.recon, &dz, grad, grad_scale, ws);
  st.codebook = q.codebook_loss;
  st.commitment = q.commitment_loss;

  if (!grad.empty()) {
    T* gcb = grad.data() + codebook_offset_;
    const double c = 2.0 * grad_scale / static_cast<double>(npos);
    for (std::size_t p = 0; p < npos; ++p) {
      const auto k = static_cast<std::size_t>(q.indices[p]);
      for (std::size_t j = 0; j < emb; ++j)
        gcb[k * emb + j] +=
            static_cast<T>(c * (static_cast<double>(z_q[p * emb + j]) - ws.z_e[p * emb + j]));
    }
    std::vector<T> dcf;
    to_transposed<T>(npos, emb, dz, dcf);
    run_backward(enc_, dcf, s, ws.enc, grad, nullptr, ws);
  }
  st.indices = std::move(q.indices);
  return st;
}

template class VqModel<float>;
template class VqModel<double>;

VqModel<float> VqCheckpoint::model() const {
  VqModel<float> m(config);
  m.params().load(params);
  m.set_range(range_lo, range_hi);
  return m;
}

std::string codebook_hash(std::span<const float> codebook) { return hash_floats(codebook); }

namespace {

SliceDims slice_dims_of(const Volume4D& v) { return {v.dims().h, v.dims().w, v.dims().t}; }

std::vector<float> normalized_slice(const Volume4D& v, int d, const VqModel<float>& m) {
  auto s = v.slice(d);
  for (auto& x : s) x = m.normalize(x);
  return s;
}

}  // namespace

VqCheckpoint train_vq(std::span<const Volume4D> data, const VqConfig& cfg,
                      const VqTrainHooks& hooks) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("vq training needs at least one volume");
  const SliceDims sd = slice_dims_of(data.front());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& v : data) {
    const SliceDims o = slice_dims_of(v);
    if (o.h != sd.h || o.w != sd.w || o.t != sd.t)
      throw std::invalid_argument("training volumes must share (h, w, t)");
    for (float x : v.data()) {
      lo = std::min(lo, static_cast<double>(x));
      hi = std::max(hi, static_cast<double>(x));
    }
  }
  if (!(hi > lo)) {  // constant data sits mid-range
    lo -= 0.5;
    hi = lo + 1.0;
  }

  VqModel<float> model(cfg);
  model.init(cfg.seed);
  model.set_range(lo, hi);
  const SliceDims ld = model.latent_dims(sd);

  std::vector<std::vector<float>> slices;
  for (const auto& v : data)
    for (int d = 0; d < v.dims().d; ++d) slices.push_back(normalized_slice(v, d, model));

  const auto emb = static_cast<std::size_t>(cfg.emb);
  const auto K = static_cast<std::size_t>(cfg.codebook_size);
  VqWorkspace<float> ws;

  // Codebook starts from encoder outputs of a few random slices.
  {
    Stream rng({cfg.seed, 0x63620ULL});
    std::vector<float> pool;
    const std::size_t probe = std::min<std::size_t>(slices.size(), 8);
    for (std::size_t i = 0; i < probe; ++i) {
      const auto idx = static_cast<std::size_t>(
          rng.integer(0, static_cast<std::int64_t>(slices.size()) - 1));
      std::vector<float> z;
      model.encode_slice(slices[idx], sd, z, ws);
      pool.insert(pool.end(), z.begin(), z.end());
    }
    const std::size_t rows = pool.size() / emb;
    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    auto cb = model.codebook();
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t r = k < rows ? order[k] : order[k % rows];
      for (std::size_t j = 0; j < emb; ++j) {
        const double jitter = k < rows ? 0.0 : 1e-3 * rng.normal();
        cb[k * emb + j] = static_cast<float>(pool[r * emb + j] + jitter);
      }
    }
  }

  AdamW<float> opt(model.params().size(), {cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  std::vector<float> grad(model.params().size());
  VqCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.range_lo = lo;
  ckpt.range_hi = hi;
  ckpt.usage.assign(K, 0);

  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Stream rng({cfg.seed, static_cast<std::uint64_t>(epoch), 0x6570ULL});
    std::vector<std::size_t> order(slices.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());

    std::vector<std::int64_t> usage(K, 0);
    std::vector<float> recent;  // encoder outputs of the last batch
    double mse_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t end = std::min(order.size(), start + B);
      std::fill(grad.begin(), grad.end(), 0.0F);
      recent.clear();
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        auto st = model.slice_step(slices[order[i]], sd, grad, scale, ws);
        if (!std::isfinite(st.recon) || !std::isfinite(st.commitment))
          throw std::runtime_error("vq training diverged (non-finite loss) in epoch " +
                                   std::to_string(epoch));
        mse_sum += st.recon;
        for (int k : st.indices) ++usage[static_cast<std::size_t>(k)];
        recent.insert(recent.end(), ws.z_e.begin(), ws.z_e.end());
      }
      for (float g : grad)
        if (!std::isfinite(g))
          throw std::runtime_error("vq training diverged (non-finite gradient) in epoch " +
                                   std::to_string(epoch));
      opt.step(model.params().values(), grad);
    }
    const double mse = mse_sum / static_cast<double>(slices.size());
    ckpt.mse_history.push_back(mse);

    // Dead entries are re-seeded from encoder outputs of the last batch.
    auto cb = model.codebook();
    const std::size_t rows = recent.size() / emb;
    for (std::size_t k = 0; k < K; ++k) {
      if (usage[k] != 0 || rows == 0) continue;
      const auto r = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(rows) - 1));
      for (std::size_t j = 0; j < emb; ++j)
        cb[k * emb + j] = static_cast<float>(recent[r * emb + j] + 1e-3 * rng.normal());
    }
    ckpt.usage = usage;
    ckpt.epoch = epoch;
    if (hooks.on_epoch) hooks.on_epoch(epoch, mse);
  }
  (void)ld;
  ckpt.params = model.params().to_tensors();
  ckpt.codebook_hash = codebook_hash(model.codebook());
  return ckpt;
}

LatentVolume encode_volume(const Volume4D& v, const VqModel<float>& model,
                           const std::string& hash) {
  const auto& cfg = model.config();
  const SliceDims sd = slice_dims_of(v);
  const SliceDims ld = model.latent_dims(sd);
  const auto emb = static_cast<std::size_t>(cfg.emb);
  const std::size_t per_slice = ld.count() * emb;
  LatentVolume z;
  z.dims = {v.dims().d, ld.h, ld.w, ld.t};
  z.channels = cfg.emb;
  z.spacing = {v.spacing().d, v.spacing().h * cfg.f, v.spacing().w * cfg.f,
               v.spacing().t * cfg.f};
  z.factor = cfg.f;
  z.codebook_hash = hash.empty() ? codebook_hash(model.codebook()) : hash;
  z.data.resize(per_slice * static_cast<std::size_t>(v.dims().d));
  std::vector<std::string> errors(static_cast<std::size_t>(v.dims().d));
#pragma omp parallel for schedule(dynamic)
  for (int d = 0; d < v.dims().d; ++d) {
    try {
      VqWorkspace<float> ws;
      std::vector<float> z_e;
      model.encode_slice(normalized_slice(v, d, model), sd, z_e, ws);
      std::span<float> dst(z.data.data() + per_slice * static_cast<std::size_t>(d), per_slice);
      vq_quantize<float>(z_e, model.codebook(), cfg.emb, dst);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(d)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::invalid_argument(e);
  return z;
}

Volume4D decode_volume(const LatentVolume& z, const VqModel<float>& model) {
  const auto& cfg = model.config();
  if (z.channels != cfg.emb)
    throw std::invalid_argument("latent has " + std::to_string(z.channels) +
                                " channels, decoder expects " + std::to_string(cfg.emb));
  const int f = cfg.f;
  const SliceDims ld{z.dims.h, z.dims.w, z.dims.t};
  const SliceDims sd{ld.h * f, ld.w * f, ld.t * f};
  const std::size_t per_latent = ld.count() * static_cast<std::size_t>(cfg.emb);
  const Dims4 out_dims{z.dims.d, sd.h, sd.w, sd.t};
  const Spacing sp{z.spacing.d, z.spacing.h / f, z.spacing.w / f, z.spacing.t / f};
  std::vector<float> out(out_dims.count());
  const auto lo = static_cast<float>(model.range_lo());
  const auto hi = static_cast<float>(model.range_hi());
#pragma omp parallel for schedule(dynamic)
  for (int d = 0; d < z.dims.d; ++d) {
    VqWorkspace<float> ws;
    std::vector<float> x_hat;
    model.decode_slice(
        std::span<const float>(z.data.data() + per_latent * static_cast<std::size_t>(d),
                               per_latent),
        ld, x_hat, ws);
    float* dst = out.data() + sd.count() * static_cast<std::size_t>(d);
    for (std::size_t i = 0; i < x_hat.size(); ++i)
      dst[i] = std::clamp(model.denormalize(x_hat[i]), lo, hi);
  }
  return Volume4D(out_dims, sp, VolumeKind::image, std::move(out));
}

LatentVolume quantize_latent(const LatentVolume& z, const VqModel<float>& model) {
  if (z.channels != model.config().emb)
    throw std::invalid_argument("latent channel count does not match the codebook");
  LatentVolume out = z;
  vq_quantize<float>(z.data, model.codebook(), z.channels, out.data);
  return out;
}

double reconstruction_mse(const Volume4D& v, const VqModel<float>& model) {
  const Volume4D r = decode_volume(encode_volume(v, model), model);
  double s = 0.0;
  for (std::size_t i = 0; i < v.data().size(); ++i) {
    const double d = static_cast<double>(r.data()[i]) - v.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(v.data().size());
}

void save_vq_checkpoint(const std::filesystem::path& dir, const VqCheckpoint& ckpt) {
  std::filesystem::create_directories(dir);
  write_bundle(dir / "params.t4d", ckpt.params);
  json m;
  m["kind"] = "vq";
  m["config"] = to_json(ckpt.config);
  m["range"] = {ckpt.range_lo, ckpt.range_hi};
  m["epoch"] = ckpt.epoch;
  m["mse_history"] = ckpt.mse_history;
  m["usage"] = ckpt.usage;
  m["codebook_hash"] = ckpt.codebook_hash;
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

VqCheckpoint load_vq_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing VQ manifest in " + dir.string());
  const json m = json::parse(in);
  if (m.value("kind", std::string{}) != "vq")
    throw std::runtime_error(dir.string() + " is not a VQ checkpoint");
  VqCheckpoint c;
  std::vector<std::string> problems;
  c.config = vq_config_from_json(m.at("config"), problems, "config.");
  if (!problems.empty()) throw std::runtime_error("bad VQ manifest: " + problems.front());
  const auto r = m.at("range").get<std::vector<double>>();
  c.range_lo = r.at(0);
  c.range_hi = r.at(1);
  c.epoch = m.at("epoch").get<int>();
  c.mse_history = m.at("mse_history").get<std::vector<double>>();
  c.usage = m.value("usage", std::vector<std::int64_t>{});
  c.codebook_hash = m.at("codebook_hash").get<std::string>();
  c.params = read_bundle(dir / "params.t4d");
  return c;
}

}  // namespace cinegen
