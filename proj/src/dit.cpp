#include "cinegen/dit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "cinegen/container.hpp"
#include "cinegen/json_fields.hpp"
#include "cinegen/kernels.hpp"
#include "cinegen/rng.hpp"

namespace cinegen {

using nlohmann::json;

void DitConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("dit depth must be >= 1");
  if (width < 8 || width % 8 != 0) throw std::invalid_argument("dit width must be divisible by 8");
  if (heads < 1 || width % heads != 0)
    throw std::invalid_argument("dit width must be divisible by the head count");
  if (mlp_ratio < 1) throw std::invalid_argument("mlp_ratio must be >= 1");
  if (freq_dim < 2 || freq_dim % 2 != 0) throw std::invalid_argument("freq_dim must be even");
  if (timesteps < 1) throw std::invalid_argument("timesteps must be >= 1");
  if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (smoothing_window < 1) throw std::invalid_argument("smoothing_window must be >= 1");
}

json to_json(const DitConfig& c) {
  return json{{"depth", c.depth},
              {"width", c.width},
              {"heads", c.heads},
              {"mlp_ratio", c.mlp_ratio},
              {"freq_dim", c.freq_dim},
              {"patch", {c.patch.d, c.patch.h, c.patch.w, c.patch.t}},
              {"mask", to_string(c.mask)},
              {"timesteps", c.timesteps},
              {"schedule_offset", c.schedule_offset},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"iterations", c.iterations},
              {"batch_size", c.batch_size},
              {"log_interval", c.log_interval},
              {"checkpoint_interval", c.checkpoint_interval},
              {"smoothing_window", c.smoothing_window},
              {"seed", c.seed},
              {"clip_x0", c.clip_x0}};
}

DitConfig dit_config_from_json(const json& j, std::vector<std::string>& unknown,
                               const std::string& prefix) {
  DitConfig c;
  FieldReader r(j, unknown, prefix);
  r.read("depth", c.depth);
  r.read("width", c.width);
  r.read("heads", c.heads);
  r.read("mlp_ratio", c.mlp_ratio);
  r.read("freq_dim", c.freq_dim);
  std::vector<int> patch;
  if (r.read("patch", patch)) {
    if (patch.size() == 4)
      c.patch = {patch[0], patch[1], patch[2], patch[3]};
    else
      r.problem("patch", "expected 4 extents");
  }
  std::string mask;
  if (r.read("mask", mask)) {
    try {
      c.mask = mask_mode_from_string(mask);
    } catch (const std::invalid_argument&) {
      r.problem("mask", "expected full or slice_factorized");
    }
  }
  r.read("timesteps", c.timesteps);
  r.read("schedule_offset", c.schedule_offset);
  r.read("lr", c.lr);
  r.read("weight_decay", c.weight_decay);
  r.read("iterations", c.iterations);
  r.read("batch_size", c.batch_size);
  r.read("log_interval", c.log_interval);
  r.read("checkpoint_interval", c.checkpoint_interval);
  r.read("smoothing_window", c.smoothing_window);
  r.read("seed", c.seed);
  r.read("clip_x0", c.clip_x0);
  return c;
}

std::size_t dit_parameter_count(const DitConfig& cfg, std::size_t patch_values) {
  const std::size_t e = static_cast<std::size_t>(cfg.width);
  const std::size_t r = static_cast<std::size_t>(cfg.mlp_ratio);
  const std::size_t f = static_cast<std::size_t>(cfg.freq_dim);
  const std::size_t p = patch_values;
  const std::size_t block = (10 + 2 * r) * e * e + (11 + r) * e;
  return static_cast<std::size_t>(cfg.depth) * block + p * e + e + f * e + e + e * e + e +
         2 * e * e + 2 * e + e * p + p;
}

std::vector<double> timestep_sinusoid(int t, int dim) { return sincos_1d(t, dim); }

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

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(kGeluA) * x * x * x);
  const T th = std::tanh(u);
  return T(0.5) * (T(1) + th) +
         T(0.5) * x * (T(1) - th * th) * T(kGeluC) * (T(1) + T(3 * kGeluA) * x * x);
}

constexpr double kLnEps = 1e-6;

template <typename T>
void linear_forward(const T* P, const detail::LinearRef& l, const T* x, std::size_t rows, T* y) {
  const auto out = static_cast<std::size_t>(l.out);
  kernels::gemm_nn(rows, out, static_cast<std::size_t>(l.in), x, P + l.w, y, false);
  const T* b = P + l.b;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out; ++j) y[r * out + j] += b[j];
}

// Accumulates dW, db into G; writes dx (if non-null).
template <typename T>
void linear_backward(const T* P, const detail::LinearRef& l, const T* x, std::size_t rows,
                     const T* dy, T* G, T* dx) {
  const auto in = static_cast<std::size_t>(l.in);
  const auto out = static_cast<std::size_t>(l.out);
  kernels::gemm_tn(in, out, rows, x, dy, G + l.w, true);
  T* db = G + l.b;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < out; ++j) db[j] += dy[r * out + j];
  if (dx != nullptr) kernels::gemm_nt(rows, in, out, dy, P + l.w, dx, false);
}

template <typename T>
void layernorm_forward(const T* x, std::size_t rows, std::size_t cols, T* y, T* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * cols;
    T mean = 0;
    for (std::size_t j = 0; j < cols; ++j) mean += xr[j];
    mean /= T(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= T(cols);
    const T rs = T(1) / std::sqrt(var + T(kLnEps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = (xr[j] - mean) * rs;
  }
}

// dx (+)= rstd·(dy − mean(dy) − y·mean(dy⊙y))
template <typename T>
void layernorm_backward(const T* y, const T* rstd, const T* dy, std::size_t rows,
                        std::size_t cols, T* dx, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y + r * cols;
    const T* dyr = dy + r * cols;
    T mdy = 0, mdyy = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      mdy += dyr[j];
      mdyy += dyr[j] * yr[j];
    }
    mdy /= T(cols);
    mdyy /= T(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      const T v = rstd[r] * (dyr[j] - mdy - yr[j] * mdyy);
      if (accumulate)
        dx[r * cols + j] += v;
      else
        dx[r * cols + j] = v;
    }
  }
}

// m = ln ⊙ (1 + scale) + shift, broadcast over rows.
template <typename T>
void modulate(const T* ln, const T* shift, const T* scale, std::size_t rows, std::size_t cols,
              T* m) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j)
      m[r * cols + j] = ln[r * cols + j] * (T(1) + scale[j]) + shift[j];
}

// Given dm, writes dshift, dscale and dln.
template <typename T>
void modulate_backward(const T* ln, const T* scale, const T* dm, std::size_t rows,
                       std::size_t cols, T* dshift, T* dscale, T* dln) {
  std::fill(dshift, dshift + cols, T(0));
  std::fill(dscale, dscale + cols, T(0));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) {
      const T g = dm[r * cols + j];
      dshift[j] += g;
      dscale[j] += g * ln[r * cols + j];
      dln[r * cols + j] = g * (T(1) + scale[j]);
    }
}

}  // namespace

template <typename T>
typename DitModel<T>::Linear DitModel<T>::add_linear(const std::string& name, int in, int out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.w = params_.add(name + ".weight", {in, out});
  l.b = params_.add(name + ".bias", {out});
  return l;
}

template <typename T>
DitModel<T>::DitModel(const DitConfig& cfg, const Dims4& latent_dims, int channels)
    : cfg_(cfg), latent_dims_(latent_dims), channels_(channels) {
  cfg_.validate();
  grid_ = patch_grid(latent_dims_, cfg_.patch);
  n_ = grid_.count();
  p_ = static_cast<std::size_t>(cfg_.patch.volume()) * channels_;
  const int e = cfg_.width;
  const int p = static_cast<int>(p_);
  x_embed_ = add_linear("x_embed", p, e);
  t_fc1_ = add_linear("t_embed.fc1", cfg_.freq_dim, e);
  t_fc2_ = add_linear("t_embed.fc2", e, e);
  for (int l = 0; l < cfg_.depth; ++l) {
    const std::string pre = "blocks." + std::to_string(l) + ".";
    Block b;
    b.ada = add_linear(pre + "ada", e, 6 * e);
    b.qkv = add_linear(pre + "qkv", e, 3 * e);
    b.proj = add_linear(pre + "proj", e, e);
    b.fc1 = add_linear(pre + "fc1", e, cfg_.mlp_ratio * e);
    b.fc2 = add_linear(pre + "fc2", cfg_.mlp_ratio * e, e);
    blocks_.push_back(b);
  }
  final_ada_ = add_linear("final.ada", e, 2 * e);
  head_ = add_linear("final.head", e, p);

  const auto table = posenc_4d(grid_, e);
  posenc_.assign(table.begin(), table.end());
  mask_ = build_attention_mask(grid_, cfg_.mask);
}

template <typename T>
void DitModel<T>::set_mask(MaskMode mode) {
  cfg_.mask = mode;
  mask_ = build_attention_mask(grid_, mode);
}

template <typename T>
void DitModel<T>::disable_positional_encoding() {
  std::fill(posenc_.begin(), posenc_.end(), T(0));
}

template <typename T>
void DitModel<T>::init(std::uint64_t seed) {
  Stream rng({seed, 0x696e6974ULL});
  T* P = params_.data();
  std::fill(P, P + params_.size(), T(0));
  auto xavier = [&](const Linear& l) {
    const double bound = std::sqrt(6.0 / (l.in + l.out));
    const std::size_t n = static_cast<std::size_t>(l.in) * l.out;
    for (std::size_t i = 0; i < n; ++i) P[l.w + i] = static_cast<T>(rng.uniform(-bound, bound));
  };
  auto normal = [&](const Linear& l, double std) {
    const std::size_t n = static_cast<std::size_t>(l.in) * l.out;
    for (std::size_t i = 0; i < n; ++i) P[l.w + i] = static_cast<T>(std * rng.normal());
  };
  xavier(x_embed_);
  normal(t_fc1_, 0.02);
  normal(t_fc2_, 0.02);
  for (const auto& b : blocks_) {
    xavier(b.qkv);
    xavier(b.proj);
    xavier(b.fc1);
    xavier(b.fc2);
  }
}

template <typename T>
void DitModel<T>::init_random(std::uint64_t seed, double scale) {
  Stream rng({seed, 0x72616e64ULL});
  for (auto& v : params_.values()) v = static_cast<T>(scale * rng.normal());
}

template <typename T>
std::vector<T> DitModel<T>::timestep_embed(int t) const {
  DitWorkspace<T> ws;
  const auto raw = timestep_sinusoid(t, cfg_.freq_dim);
  std::vector<T> traw(raw.begin(), raw.end());
  const auto e = static_cast<std::size_t>(cfg_.width);
  std::vector<T> h(e), c(e);
  linear_forward(params_.data(), t_fc1_, traw.data(), 1, h.data());
  for (auto& v : h) v = silu(v);
  linear_forward(params_.data(), t_fc2_, h.data(), 1, c.data());
  return c;
}

template <typename T>
void DitModel<T>::forward(std::span<const T> tokens, int t, std::span<T> out,
                          DitWorkspace<T>& ws) const {
  if (tokens.size() != numel() || out.size() != numel())
    throw std::invalid_argument("dit_forward: token buffer does not match N x P");
  if (mask_.n != n_) throw std::invalid_argument("dit_forward: mask size mismatch");
  const std::size_t N = n_, P = p_;
  const auto e = static_cast<std::size_t>(cfg_.width);
  const std::size_t r = static_cast<std::size_t>(cfg_.mlp_ratio) * e;
  const auto H = static_cast<std::size_t>(cfg_.heads);
  const std::size_t dh = e / H;
  const T scale = T(1) / std::sqrt(T(dh));
  const T* W = params_.data();
  const std::span<const unsigned char> allowed =
      cfg_.mask == MaskMode::full ? std::span<const unsigned char>{} : mask_.allowed;

  // Conditioning.
  const auto raw = timestep_sinusoid(t, cfg_.freq_dim);
  ws.traw.assign(raw.begin(), raw.end());
  ws.th1.resize(e);
  ws.ta1.resize(e);
  ws.c.resize(e);
  ws.sc.resize(e);
  linear_forward(W, t_fc1_, ws.traw.data(), 1, ws.th1.data());
  for (std::size_t j = 0; j < e; ++j) ws.ta1[j] = silu(ws.th1[j]);
  linear_forward(W, t_fc2_, ws.ta1.data(), 1, ws.c.data());
  for (std::size_t j = 0; j < e; ++j) ws.sc[j] = silu(ws.c[j]);

  // Token embedding.
  std::vector<T> x(N * e);
  linear_forward(W, x_embed_, tokens.data(), N, x.data());
  for (std::size_t i = 0; i < N * e; ++i) x[i] += posenc_[i];

  ws.blocks.resize(blocks_.size());
  ws.head_q.resize(N * dh);
  ws.head_k.resize(N * dh);
  ws.head_v.resize(N * dh);
  ws.head_o.resize(N * dh);
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    auto& bc = ws.blocks[l];
    bc.x_in = x;
    bc.mod.resize(6 * e);
    linear_forward(W, b.ada, ws.sc.data(), 1, bc.mod.data());
    const T* shift1 = bc.mod.data();
    const T* scale1 = shift1 + e;
    const T* gate1 = shift1 + 2 * e;
    const T* shift2 = shift1 + 3 * e;
    const T* scale2 = shift1 + 4 * e;
    const T* gate2 = shift1 + 5 * e;

    bc.ln1.resize(N * e);
    bc.rstd1.resize(N);
    bc.m1.resize(N * e);
    layernorm_forward(x.data(), N, e, bc.ln1.data(), bc.rstd1.data());
    modulate(bc.ln1.data(), shift1, scale1, N, e, bc.m1.data());

    bc.qkv.resize(N * 3 * e);
    linear_forward(W, b.qkv, bc.m1.data(), N, bc.qkv.data());
    bc.probs.resize(H * N * N);
    bc.attn.resize(N * e);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < dh; ++k) {
          ws.head_q[n * dh + k] = bc.qkv[n * 3 * e + h * dh + k];
          ws.head_k[n * dh + k] = bc.qkv[n * 3 * e + e + h * dh + k];
          ws.head_v[n * dh + k] = bc.qkv[n * 3 * e + 2 * e + h * dh + k];
        }
      T* S = bc.probs.data() + h * N * N;
      kernels::gemm_nt(N, N, dh, ws.head_q.data(), ws.head_k.data(), S, false);
      for (std::size_t i = 0; i < N * N; ++i) S[i] *= scale;
      kernels::masked_softmax_rows(N, N, S, allowed);
      kernels::gemm_nn(N, dh, N, S, ws.head_v.data(), ws.head_o.data(), false);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < dh; ++k) bc.attn[n * e + h * dh + k] = ws.head_o[n * dh + k];
    }
    bc.a.resize(N * e);
    linear_forward(W, b.proj, bc.attn.data(), N, bc.a.data());
    bc.x_mid.resize(N * e);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < e; ++j)
        bc.x_mid[n * e + j] = x[n * e + j] + gate1[j] * bc.a[n * e + j];

    bc.ln2.resize(N * e);
    bc.rstd2.resize(N);
    bc.m2.resize(N * e);
    layernorm_forward(bc.x_mid.data(), N, e, bc.ln2.data(), bc.rstd2.data());
    modulate(bc.ln2.data(), shift2, scale2, N, e, bc.m2.data());
    bc.h.resize(N * r);
    bc.g.resize(N * r);
    bc.f.resize(N * e);
    linear_forward(W, b.fc1, bc.m2.data(), N, bc.h.data());
    for (std::size_t i = 0; i < N * r; ++i) bc.g[i] = gelu(bc.h[i]);
    linear_forward(W, b.fc2, bc.g.data(), N, bc.f.data());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < e; ++j)
        x[n * e + j] = bc.x_mid[n * e + j] + gate2[j] * bc.f[n * e + j];
  }

  ws.x_final = x;
  ws.fmod.resize(2 * e);
  linear_forward(W, final_ada_, ws.sc.data(), 1, ws.fmod.data());
  ws.lnf.resize(N * e);
  ws.rstdf.resize(N);
  ws.mf.resize(N * e);
  layernorm_forward(x.data(), N, e, ws.lnf.data(), ws.rstdf.data());
  modulate(ws.lnf.data(), ws.fmod.data(), ws.fmod.data() + e, N, e, ws.mf.data());
  linear_forward(W, head_, ws.mf.data(), N, out.data());
  (void)P;
}

template <typename T>
void DitModel<T>::backward(std::span<const T> tokens, std::span<const T> out_grad,
                           DitWorkspace<T>& ws, std::span<T> grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
  const std::size_t N = n_;
  const auto e = static_cast<std::size_t>(cfg_.width);
  const std::size_t r = static_cast<std::size_t>(cfg_.mlp_ratio) * e;
  const auto H = static_cast<std::size_t>(cfg_.heads);
  const std::size_t dh = e / H;
  const T scale = T(1) / std::sqrt(T(dh));
  const T* W = params_.data();
  T* G = grad.data();

  ws.dsc.assign(e, T(0));
  ws.dtmp.resize(std::max(N * r, 6 * e));
  ws.dmod.resize(6 * e);
  ws.dx.resize(N * e);
  ws.dln.resize(N * e);
  ws.dh.resize(N * r);
  ws.dattn.resize(N * e);
  ws.dqkv.resize(N * 3 * e);
  ws.dprob.resize(N * N);
  std::vector<T> dm(N * e);

  // Head and final adaptive norm.
  linear_backward(W, head_, ws.mf.data(), N, out_grad.data(), G, dm.data());
  modulate_backward(ws.lnf.data(), ws.fmod.data() + e, dm.data(), N, e, ws.dmod.data(),
                    ws.dmod.data() + e, ws.dln.data());
  linear_backward(W, final_ada_, ws.sc.data(), 1, ws.dmod.data(), G, ws.dtmp.data());
  for (std::size_t j = 0; j < e; ++j) ws.dsc[j] += ws.dtmp[j];
  layernorm_backward(ws.lnf.data(), ws.rstdf.data(), ws.dln.data(), N, e, ws.dx.data(), false);

  std::vector<T> dx_mid(N * e), dq(N * dh), dk(N * dh), dv(N * dh), dO(N * dh);
  for (std::size_t li = blocks_.size(); li-- > 0;) {
    const Block& b = blocks_[li];
    const auto& bc = ws.blocks[li];
    const T* scale1 = bc.mod.data() + e;
    const T* gate1 = bc.mod.data() + 2 * e;
    const T* scale2 = bc.mod.data() + 4 * e;
    const T* gate2 = bc.mod.data() + 5 * e;
    T* dshift1 = ws.dmod.data();
    T* dscale1 = dshift1 + e;
    T* dgate1 = dshift1 + 2 * e;
    T* dshift2 = dshift1 + 3 * e;
    T* dscale2 = dshift1 + 4 * e;
    T* dgate2 = dshift1 + 5 * e;

    // x_out = x_mid + gate2 ⊙ f
    std::vector<T> df(N * e);
    std::fill(dgate2, dgate2 + e, T(0));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < e; ++j) {
        dgate2[j] += ws.dx[n * e + j] * bc.f[n * e + j];
        df[n * e + j] = ws.dx[n * e + j] * gate2[j];
      }
    linear_backward(W, b.fc2, bc.g.data(), N, df.data(), G, ws.dh.data());
    for (std::size_t i = 0; i < N * r; ++i) ws.dh[i] *= gelu_grad(bc.h[i]);
    linear_backward(W, b.fc1, bc.m2.data(), N, ws.dh.data(), G, dm.data());
    modulate_backward(bc.ln2.data(), scale2, dm.data(), N, e, dshift2, dscale2, ws.dln.data());
    dx_mid = ws.dx;
    layernorm_backward(bc.ln2.data(), bc.rstd2.data(), ws.dln.data(), N, e, dx_mid.data(), true);

    // x_mid = x_in + gate1 ⊙ a
    std::vector<T> da(N * e);
    std::fill(dgate1, dgate1 + e, T(0));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t j = 0; j < e; ++j) {
        dgate1[j] += dx_mid[n * e + j] * bc.a[n * e + j];
        da[n * e + j] = dx_mid[n * e + j] * gate1[j];
      }
    linear_backward(W, b.proj, bc.attn.data(), N, da.data(), G, ws.dattn.data());

    // Attention.
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < dh; ++k) {
          ws.head_q[n * dh + k] = bc.qkv[n * 3 * e + h * dh + k];
          ws.head_k[n * dh + k] = bc.qkv[n * 3 * e + e + h * dh + k];
          ws.head_v[n * dh + k] = bc.qkv[n * 3 * e + 2 * e + h * dh + k];
          dO[n * dh + k] = ws.dattn[n * e + h * dh + k];
        }
      const T* Pm = bc.probs.data() + h * N * N;
      T* dP = ws.dprob.data();
      kernels::gemm_nt(N, N, dh, dO.data(), ws.head_v.data(), dP, false);
      kernels::gemm_tn(N, dh, N, Pm, dO.data(), dv.data(), false);
      for (std::size_t i = 0; i < N; ++i) {
        T s = 0;
        for (std::size_t j = 0; j < N; ++j) s += Pm[i * N + j] * dP[i * N + j];
        if (corrupt_attention_grad_) s = 0;
        for (std::size_t j = 0; j < N; ++j)
          dP[i * N + j] = Pm[i * N + j] * (dP[i * N + j] - s) * scale;
      }
      kernels::gemm_nn(N, dh, N, dP, ws.head_k.data(), dq.data(), false);
      kernels::gemm_tn(N, dh, N, dP, ws.head_q.data(), dk.data(), false);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t k = 0; k < dh; ++k) {
          ws.dqkv[n * 3 * e + h * dh + k] = dq[n * dh + k];
          ws.dqkv[n * 3 * e + e + h * dh + k] = dk[n * dh + k];
          ws.dqkv[n * 3 * e + 2 * e + h * dh + k] = dv[n * dh + k];
        }
    }
    linear_backward(W, b.qkv, bc.m1.data(), N, ws.dqkv.data(), G, dm.data());
    modulate_backward(bc.ln1.data(), scale1, dm.data(), N, e, dshift1, dscale1, ws.dln.data());
    ws.dx = dx_mid;
    layernorm_backward(bc.ln1.data(), bc.rstd1.data(), ws.dln.data(), N, e, ws.dx.data(), true);

    linear_backward(W, b.ada, ws.sc.data(), 1, ws.dmod.data(), G, ws.dtmp.data());
    for (std::size_t j = 0; j < e; ++j) ws.dsc[j] += ws.dtmp[j];
  }

  linear_backward(W, x_embed_, tokens.data(), N, ws.dx.data(), G, static_cast<T*>(nullptr));

  std::vector<T> dc(e), da1(e);
  for (std::size_t j = 0; j < e; ++j) dc[j] = ws.dsc[j] * silu_grad(ws.c[j]);
  linear_backward(W, t_fc2_, ws.ta1.data(), 1, dc.data(), G, da1.data());
  for (std::size_t j = 0; j < e; ++j) da1[j] *= silu_grad(ws.th1[j]);
  linear_backward(W, t_fc1_, ws.traw.data(), 1, da1.data(), G, static_cast<T*>(nullptr));
}

template <typename T>
double DitModel<T>::draw_loss(std::span<const T> x0, const TrainingDraw& draw,
                              const NoiseSchedule& schedule, double grad_scale, std::span<T> grad,
                              DitWorkspace<T>& ws) const {
  const std::size_t n = numel();
  if (x0.size() != n || draw.eps.size() != n)
    throw std::invalid_argument("training sample does not match the model token shape");
  const double a = std::sqrt(schedule.alphabar[draw.t]);
  const double s = std::sqrt(1.0 - schedule.alphabar[draw.t]);
  std::vector<T> xt(n), out(n);
  for (std::size_t i = 0; i < n; ++i) xt[i] = static_cast<T>(a * x0[i] + s * draw.eps[i]);
  forward(xt, draw.t, out, ws);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(out[i]) - draw.eps[i];
    sum += d * d;
  }
  if (!grad.empty()) {
    std::vector<T> dout(n);
    const double c = 2.0 * grad_scale / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      dout[i] = static_cast<T>(c * (static_cast<double>(out[i]) - draw.eps[i]));
    backward(xt, dout, ws, grad);
  }
  return sum / static_cast<double>(n);
}

template <typename T>
double DitModel<T>::batch_loss(std::span<const std::vector<T>> x0_tokens,
                               const NoiseSchedule& schedule, std::uint64_t seed,
                               std::span<T> grad, DitWorkspace<T>& ws) const {
  if (x0_tokens.empty()) throw std::invalid_argument("empty training batch");
  const double inv_b = 1.0 / static_cast<double>(x0_tokens.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x0_tokens.size(); ++i) {
    const auto draw = training_draw(seed, i, numel(), schedule.steps);
    total += draw_loss(x0_tokens[i], draw, schedule, inv_b, grad, ws);
  }
  return total * inv_b;
}

template class DitModel<float>;
template class DitModel<double>;

GradCheckResult grad_check(const DitConfig& cfg, const Dims4& latent_dims, int channels,
                           const GradCheckOptions& opts) {
  if (opts.samples < 200)
    throw std::invalid_argument("grad_check must sample at least 200 parameters");
  DitModel<double> model(cfg, latent_dims, channels);
  model.init_random(opts.seed, opts.init_scale);
  model.set_corrupt_attention_grad(opts.corrupt_attention_grad);
  const auto schedule = cosine_schedule(cfg.timesteps, cfg.schedule_offset);

  Stream rng({opts.seed, 0x67636bULL});
  std::vector<std::vector<double>> batch(static_cast<std::size_t>(opts.batch));
  for (auto& x : batch) {
    x.resize(model.numel());
    for (auto& v : x) v = rng.normal();
  }
  const std::uint64_t draw_seed = stream_key({opts.seed, 7});
  DitWorkspace<double> ws;
  std::vector<double> grad(model.parameter_count(), 0.0);
  model.batch_loss(batch, schedule, draw_seed, grad, ws);

  const std::size_t total = model.parameter_count();
  const auto want = std::min(static_cast<std::size_t>(opts.samples), total);
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  idx.resize(want);

  GradCheckResult res;
  auto values = model.params().values();
  for (std::size_t k : idx) {
    const double saved = values[k];
    values[k] = saved + opts.step;
    const double lp = model.batch_loss(batch, schedule, draw_seed, {}, ws);
    values[k] = saved - opts.step;
    const double lm = model.batch_loss(batch, schedule, draw_seed, {}, ws);
    values[k] = saved;
    const double numeric = (lp - lm) / (2.0 * opts.step);
    const double analytic = grad[k];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), opts.denom_floor});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(numeric - analytic) / denom);
    ++res.checked;
  }
  return res;
}

DitModel<float> DitCheckpoint::model() const {
  DitModel<float> m(config, latent_dims, latent_channels);
  m.params().load(params);
  return m;
}

double smoothed_loss(std::span<const double> history, int it, int window) {
  if (it < 1 || static_cast<std::size_t>(it) > history.size())
    throw std::out_of_range("smoothed_loss: iteration out of range");
  const int begin = std::max(0, it - window);
  double s = 0.0;
  for (int i = begin; i < it; ++i) s += history[static_cast<std::size_t>(i)];
  return s / (it - begin);
}

std::pair<double, double> latent_normalization(std::span<const LatentVolume> latents) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& z : latents)
    for (float v : z.data) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++n;
    }
  if (n == 0) return {0.0, 1.0};
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  const double sd = std::sqrt(var);
  return {mean, sd > 1e-12 ? sd : 1.0};
}

namespace {

std::vector<std::vector<float>> normalized_tokens(std::span<const LatentVolume> latents,
                                                  const PatchSpec& spec, double shift,
                                                  double scale) {
  std::vector<std::vector<float>> out;
  for (const auto& z : latents) {
    LatentVolume n = z;
    for (auto& v : n.data) v = static_cast<float>((v - shift) / scale);
    out.push_back(patchify(n, spec).tokens);
  }
  return out;
}

void check_latent_set(std::span<const LatentVolume> latents) {
  if (latents.empty()) throw std::invalid_argument("no latents to train on");
  for (const auto& z : latents) {
    z.validate();
    if (!(z.dims == latents.front().dims) || z.channels != latents.front().channels)
      throw std::invalid_argument("training latents must share dims and channels");
  }
}

}  // namespace

DitCheckpoint train_dit(std::span<const LatentVolume> latents, const DitConfig& cfg,
                        const DitTrainHooks& hooks) {
  cfg.validate();
  check_latent_set(latents);
  const auto& first = latents.front();
  const auto [shift, scale] = latent_normalization(latents);
  const auto data = normalized_tokens(latents, cfg.patch, shift, scale);

  DitModel<float> model(cfg, first.dims, first.channels);
  model.init(cfg.seed);
  const auto schedule = cosine_schedule(cfg.timesteps, cfg.schedule_offset);
  AdamW<float> opt(model.parameter_count(), {cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  DitCheckpoint ckpt;
  ckpt.config = cfg;
  ckpt.latent_dims = first.dims;
  ckpt.latent_channels = first.channels;
  ckpt.latent_shift = shift;
  ckpt.latent_scale = scale;
  if (cfg.clip_x0)
    for (const auto& seq : data)
      for (float v : seq) ckpt.x0_clip = std::max(ckpt.x0_clip, std::abs(static_cast<double>(v)));
  ckpt.latent_spacing = first.spacing;
  ckpt.latent_factor = first.factor;
  ckpt.codebook_hash = first.codebook_hash;
  ckpt.params = model.params().to_tensors();
  DitCheckpoint last_good = ckpt;

  DitWorkspace<float> ws;
  std::vector<float> grad(model.parameter_count());
  std::vector<std::vector<float>> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int it = 1; it <= cfg.iterations; ++it) {
    Stream pick({cfg.seed, static_cast<std::uint64_t>(it), 0x6261746368ULL});
    for (auto& b : batch)
      b = data[static_cast<std::size_t>(pick.integer(0, static_cast<std::int64_t>(data.size()) - 1))];
    std::fill(grad.begin(), grad.end(), 0.0F);
    const double loss = model.batch_loss(batch, schedule,
                                         stream_key({cfg.seed, static_cast<std::uint64_t>(it)}),
                                         grad, ws);
    bool finite = std::isfinite(loss);
    for (float g : grad) finite = finite && std::isfinite(g);
    if (!finite) throw TrainingDiverged(it, last_good);
    opt.step(model.params().values(), grad);
    ckpt.loss_history.push_back(loss);

    if (hooks.on_log && cfg.log_interval > 0 && it % cfg.log_interval == 0)
      hooks.on_log(it, smoothed_loss(ckpt.loss_history, it, cfg.smoothing_window));
    if (cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0) {
      ckpt.iteration = it;
      ckpt.params = model.params().to_tensors();
      last_good = ckpt;
      if (hooks.on_checkpoint) hooks.on_checkpoint(ckpt);
    }
  }
  ckpt.iteration = cfg.iterations;
  ckpt.params = model.params().to_tensors();
  return ckpt;
}

double evaluate_dit_loss(const DitCheckpoint& ckpt, std::span<const LatentVolume> latents,
                         int draws, std::uint64_t seed) {
  check_latent_set(latents);
  if (draws < 1) throw std::invalid_argument("draws must be >= 1");
  const auto model = ckpt.model();
  const auto data =
      normalized_tokens(latents, ckpt.config.patch, ckpt.latent_shift, ckpt.latent_scale);
  const auto schedule = cosine_schedule(ckpt.config.timesteps, ckpt.config.schedule_offset);
  DitWorkspace<float> ws;
  double total = 0.0;
  for (int k = 0; k < draws; ++k) {
    const auto& x0 = data[static_cast<std::size_t>(k) % data.size()];
    const auto draw =
        training_draw(seed, static_cast<std::uint64_t>(k), model.numel(), schedule.steps);
    total += model.draw_loss(x0, draw, schedule, 0.0, {}, ws);
  }
  return total / draws;
}

std::vector<LatentVolume> sample_latents(const DitCheckpoint& ckpt, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  const auto model = ckpt.model();
  const auto schedule = cosine_schedule(ckpt.config.timesteps, ckpt.config.schedule_offset);
  std::vector<LatentVolume> out(static_cast<std::size_t>(n));
  std::vector<std::string> errors(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      DitWorkspace<float> ws;
      Denoiser denoiser = [&](std::span<const float> x, int t, std::span<float> eps) {
        model.forward(x, t, eps, ws);
      };
      TokenSequence seq;
      seq.grid = model.grid();
      seq.width = model.patch_values();
      seq.tokens = sample(denoiser, model.numel(), schedule, seed, static_cast<std::uint64_t>(i),
                          ckpt.x0_clip);
      LatentVolume z = unpatchify(seq, ckpt.config.patch, ckpt.latent_dims, ckpt.latent_channels);
      for (auto& v : z.data) v = static_cast<float>(v * ckpt.latent_scale + ckpt.latent_shift);
      z.spacing = ckpt.latent_spacing;
      z.factor = ckpt.latent_factor;
      z.codebook_hash = ckpt.codebook_hash;
      out[static_cast<std::size_t>(i)] = std::move(z);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("sample " + std::to_string(i) + ": " + errors[i]);
  return out;
}

void save_dit_checkpoint(const std::filesystem::path& dir, const DitCheckpoint& ckpt) {
  std::filesystem::create_directories(dir);
  write_bundle(dir / "params.t4d", ckpt.params);
  json m;
  m["kind"] = "dit";
  m["config"] = to_json(ckpt.config);
  m["latent_dims"] = {ckpt.latent_dims.d, ckpt.latent_dims.h, ckpt.latent_dims.w,
                      ckpt.latent_dims.t};
  m["latent_channels"] = ckpt.latent_channels;
  m["latent_shift"] = ckpt.latent_shift;
  m["latent_scale"] = ckpt.latent_scale;
  m["x0_clip"] = ckpt.x0_clip;
  m["latent_spacing"] = {ckpt.latent_spacing.d, ckpt.latent_spacing.h, ckpt.latent_spacing.w,
                         ckpt.latent_spacing.t};
  m["latent_factor"] = ckpt.latent_factor;
  m["codebook_hash"] = ckpt.codebook_hash;
  m["iteration"] = ckpt.iteration;
  std::size_t count = 0;
  for (const auto& t : ckpt.params) count += t.values.size();
  m["parameter_count"] = count;
  if (!ckpt.loss_history.empty())
    m["final_smoothed_loss"] =
        smoothed_loss(ckpt.loss_history, static_cast<int>(ckpt.loss_history.size()),
                      ckpt.config.smoothing_window);
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";

  std::ofstream csv(dir / "loss.csv");
  csv << "iteration,loss,smoothed\n";
  csv.precision(17);
  for (std::size_t i = 0; i < ckpt.loss_history.size(); ++i)
    csv << i + 1 << "," << ckpt.loss_history[i] << ","
        << smoothed_loss(ckpt.loss_history, static_cast<int>(i + 1), ckpt.config.smoothing_window)
        << "\n";
}

DitCheckpoint load_dit_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("missing DiT manifest in " + dir.string());
  const json m = json::parse(in);
  if (m.value("kind", std::string{}) != "dit")
    throw std::runtime_error(dir.string() + " is not a DiT checkpoint");
  DitCheckpoint c;
  std::vector<std::string> problems;
  c.config = dit_config_from_json(m.at("config"), problems, "config.");
  if (!problems.empty()) throw std::runtime_error("bad DiT manifest: " + problems.front());
  const auto d = m.at("latent_dims").get<std::vector<int>>();
  c.latent_dims = {d.at(0), d.at(1), d.at(2), d.at(3)};
  c.latent_channels = m.at("latent_channels").get<int>();
  c.latent_shift = m.at("latent_shift").get<double>();
  c.latent_scale = m.at("latent_scale").get<double>();
  c.x0_clip = m.value("x0_clip", 0.0);
  const auto s = m.at("latent_spacing").get<std::vector<double>>();
  c.latent_spacing = {s.at(0), s.at(1), s.at(2), s.at(3)};
  c.latent_factor = m.value("latent_factor", 1);
  c.codebook_hash = m.value("codebook_hash", std::string{});
  c.iteration = m.at("iteration").get<int>();
  c.params = read_bundle(dir / "params.t4d");

  std::ifstream csv(dir / "loss.csv");
  std::string line;
  std::getline(csv, line);
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string it, loss;
    std::getline(row, it, ',');
    std::getline(row, loss, ',');
    if (!loss.empty()) c.loss_history.push_back(std::stod(loss));
  }
  return c;
}

}  // namespace cinegen
