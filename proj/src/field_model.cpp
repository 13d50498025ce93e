#include "pifm/field_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pifm {

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::silu: return "silu";
    case Activation::tanh: return "tanh";
    case Activation::identity: return "identity";
  }
  return "?";
}

Activation activation_from(const std::string& name) {
  if (name == "silu") return Activation::silu;
  if (name == "tanh") return Activation::tanh;
  if (name == "identity") return Activation::identity;
  throw ParamError("unknown activation: " + name);
}

namespace {

struct ActEval {
  double v, d1, d2;
};

inline ActEval act_eval(Activation k, double z) {
  switch (k) {
    case Activation::silu: {
      const double s = 1.0 / (1.0 + std::exp(-z));
      const double sp = s * (1.0 - s);
      return {z * s, s + z * sp, sp * (2.0 + z * (1.0 - 2.0 * s))};
    }
    case Activation::tanh: {
      const double th = std::tanh(z);
      const double d1 = 1.0 - th * th;
      return {th, d1, -2.0 * th * d1};
    }
    case Activation::identity:
      return {z, 1.0, 0.0};
  }
  return {0.0, 0.0, 0.0};
}

// Parameter features: identity, or NeRF-style bands [t, sin(w_j t), cos(w_j t)]
// with w_j = pi * 2^j. Derivative orders 0..2 are needed by the second-order
// reverse pass.
inline void encode_input(const MlpConfig& cfg, std::span<const double> x,
                         std::span<const double> tvec, Vec& e) {
  e.resize(cfg.input_width());
  std::copy(x.begin(), x.end(), e.begin());
  std::size_t pos = cfg.dim;
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    const double t = tvec[i];
    e[pos++] = t;
    if (cfg.fourier) {
      double w = std::numbers::pi;
      for (std::size_t j = 0; j < cfg.fourier_bands; ++j, w *= 2.0) {
        e[pos++] = std::sin(w * t);
        e[pos++] = std::cos(w * t);
      }
    }
  }
}

inline void encode_tangent(const MlpConfig& cfg, std::span<const double> tvec,
                           std::span<const double> dx,
                           std::span<const double> dt, Vec& de) {
  de.resize(cfg.input_width());
  std::copy(dx.begin(), dx.end(), de.begin());
  std::size_t pos = cfg.dim;
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    const double t = tvec[i];
    de[pos++] = dt[i];
    if (cfg.fourier) {
      double w = std::numbers::pi;
      for (std::size_t j = 0; j < cfg.fourier_bands; ++j, w *= 2.0) {
        de[pos++] = w * std::cos(w * t) * dt[i];
        de[pos++] = -w * std::sin(w * t) * dt[i];
      }
    }
  }
}

// lambda_e -> (lambda_x, lambda_t) through the primal encoding.
inline void decode_adjoint(const MlpConfig& cfg, std::span<const double> tvec,
                           const Vec& le, Vec& out) {
  out.assign(cfg.dim + cfg.n_heads, 0.0);
  for (std::size_t k = 0; k < cfg.dim; ++k) out[k] = le[k];
  std::size_t pos = cfg.dim;
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    const double t = tvec[i];
    double acc = le[pos++];
    if (cfg.fourier) {
      double w = std::numbers::pi;
      for (std::size_t j = 0; j < cfg.fourier_bands; ++j, w *= 2.0) {
        acc += le[pos++] * w * std::cos(w * t);
        acc += le[pos++] * (-w * std::sin(w * t));
      }
    }
    out[cfg.dim + i] += acc;
  }
}

// lambda_de -> adjoint of the direction (dx, dt) plus the extra primal-t term
// coming from de's dependence on t (second derivative of the encoding).
inline void decode_tangent_adjoint(const MlpConfig& cfg,
                                   std::span<const double> tvec,
                                   std::span<const double> dt, const Vec& lde,
                                   Vec& dir_out, Vec& primal_extra) {
  dir_out.assign(cfg.dim + cfg.n_heads, 0.0);
  primal_extra.assign(cfg.dim + cfg.n_heads, 0.0);
  for (std::size_t k = 0; k < cfg.dim; ++k) dir_out[k] = lde[k];
  std::size_t pos = cfg.dim;
  for (std::size_t i = 0; i < cfg.n_heads; ++i) {
    const double t = tvec[i];
    double dir_acc = lde[pos];
    double primal_acc = 0.0;
    ++pos;
    if (cfg.fourier) {
      double w = std::numbers::pi;
      for (std::size_t j = 0; j < cfg.fourier_bands; ++j, w *= 2.0) {
        const double ls = lde[pos++];
        const double lc = lde[pos++];
        dir_acc += ls * w * std::cos(w * t) + lc * (-w * std::sin(w * t));
        primal_acc += dt[i] * (ls * (-w * w * std::sin(w * t)) +
                               lc * (-w * w * std::cos(w * t)));
      }
    }
    dir_out[cfg.dim + i] = dir_acc;
    primal_extra[cfg.dim + i] = primal_acc;
  }
}

void ensure_ws(const ModelParams& p, MlpWorkspace& ws) {
  const auto& cfg = p.cfg;
  auto fit = [&](std::vector<Vec>& v) {
    v.resize(cfg.depth);
    for (auto& row : v) row.assign(cfg.width, 0.0);
  };
  if (ws.z.size() != cfg.depth || (cfg.depth && ws.z[0].size() != cfg.width)) {
    fit(ws.z);
    fit(ws.a);
    fit(ws.dz);
    fit(ws.da);
    fit(ws.lz);
    fit(ws.la);
    fit(ws.ldz);
    fit(ws.lda);
  }
  ws.y.heads.resize(cfg.n_heads);
  ws.dy.heads.resize(cfg.n_heads);
  for (auto& h : ws.y.heads) h.resize(cfg.dim);
  for (auto& h : ws.dy.heads) h.resize(cfg.dim);
}

}  // namespace

ModelParams init_params(const MlpConfig& cfg, RngStream& rng) {
  if (cfg.width == 0 || cfg.depth == 0)
    throw ParamError("init_params: width and depth must be >= 1");
  if (cfg.dim == 0 || cfg.n_heads == 0)
    throw ParamError("init_params: dim and n_heads must be >= 1");
  ModelParams p;
  p.cfg = cfg;
  p.w.resize(cfg.depth);
  p.b.resize(cfg.depth);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t fan_in = l == 0 ? cfg.input_width() : cfg.width;
    p.w[l] = Matrix(cfg.width, fan_in);
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : p.w[l].a) v = s * rng.normal();
    p.b[l].assign(cfg.width, 0.0);
  }
  p.head_w.resize(cfg.n_heads);
  p.head_b.resize(cfg.n_heads);
  const double hs = 1.0 / std::sqrt(static_cast<double>(cfg.width));
  for (std::size_t k = 0; k < cfg.n_heads; ++k) {
    p.head_w[k] = Matrix(cfg.dim, cfg.width);
    for (auto& v : p.head_w[k].a) v = hs * rng.normal();
    p.head_b[k].assign(cfg.dim, 0.0);
  }
  return p;
}

ModelParams init_params(std::size_t n, std::size_t d, std::size_t width,
                        std::size_t depth, RngStream& rng, Activation act) {
  MlpConfig cfg;
  cfg.dim = d;
  cfg.n_heads = n;
  cfg.width = width;
  cfg.depth = depth;
  cfg.act = act;
  return init_params(cfg, rng);
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams g;
  g.cfg = p.cfg;
  g.w.resize(p.w.size());
  g.b.resize(p.b.size());
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    g.w[l] = Matrix(p.w[l].rows, p.w[l].cols);
    g.b[l].assign(p.b[l].size(), 0.0);
  }
  g.head_w.resize(p.head_w.size());
  g.head_b.resize(p.head_b.size());
  for (std::size_t k = 0; k < p.head_w.size(); ++k) {
    g.head_w[k] = Matrix(p.head_w[k].rows, p.head_w[k].cols);
    g.head_b[k].assign(p.head_b[k].size(), 0.0);
  }
  return g;
}

std::size_t param_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& m : p.w) n += m.a.size();
  for (const auto& v : p.b) n += v.size();
  for (const auto& m : p.head_w) n += m.a.size();
  for (const auto& v : p.head_b) n += v.size();
  return n;
}

double* param_at(ModelParams& p, std::size_t idx) {
  for (auto& m : p.w) {
    if (idx < m.a.size()) return &m.a[idx];
    idx -= m.a.size();
  }
  for (auto& v : p.b) {
    if (idx < v.size()) return &v[idx];
    idx -= v.size();
  }
  for (auto& m : p.head_w) {
    if (idx < m.a.size()) return &m.a[idx];
    idx -= m.a.size();
  }
  for (auto& v : p.head_b) {
    if (idx < v.size()) return &v[idx];
    idx -= v.size();
  }
  throw ParamError("param_at: index out of range");
}

void scale_params(ModelParams& p, double s) {
  for (auto& m : p.w)
    for (auto& v : m.a) v *= s;
  for (auto& vv : p.b)
    for (auto& v : vv) v *= s;
  for (auto& m : p.head_w)
    for (auto& v : m.a) v *= s;
  for (auto& vv : p.head_b)
    for (auto& v : vv) v *= s;
}

void axpy_params(ModelParams& y, const ModelParams& x, double alpha) {
  for (std::size_t l = 0; l < y.w.size(); ++l) {
    for (std::size_t i = 0; i < y.w[l].a.size(); ++i) y.w[l].a[i] += alpha * x.w[l].a[i];
    for (std::size_t i = 0; i < y.b[l].size(); ++i) y.b[l][i] += alpha * x.b[l][i];
  }
  for (std::size_t k = 0; k < y.head_w.size(); ++k) {
    for (std::size_t i = 0; i < y.head_w[k].a.size(); ++i)
      y.head_w[k].a[i] += alpha * x.head_w[k].a[i];
    for (std::size_t i = 0; i < y.head_b[k].size(); ++i)
      y.head_b[k][i] += alpha * x.head_b[k][i];
  }
}

double grad_norm(const ModelParams& g) {
  double s = 0.0;
  for (const auto& m : g.w)
    for (double v : m.a) s += v * v;
  for (const auto& vv : g.b)
    for (double v : vv) s += v * v;
  for (const auto& m : g.head_w)
    for (double v : m.a) s += v * v;
  for (const auto& vv : g.head_b)
    for (double v : vv) s += v * v;
  return std::sqrt(s);
}

void forward_ws(const ModelParams& p, std::span<const double> x,
                std::span<const double> tvec, MlpWorkspace& ws) {
  const auto& cfg = p.cfg;
  if (x.size() != cfg.dim || tvec.size() != cfg.n_heads)
    throw ParamError("forward: dimension mismatch");
  ensure_ws(p, ws);
  encode_input(cfg, x, tvec, ws.in);
  const Vec* prev = &ws.in;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const auto& wl = p.w[l];
    for (std::size_t i = 0; i < cfg.width; ++i) {
      double s = p.b[l][i];
      const double* row = wl.a.data() + i * wl.cols;
      for (std::size_t j = 0; j < wl.cols; ++j) s += row[j] * (*prev)[j];
      ws.z[l][i] = s;
      ws.a[l][i] = act_eval(cfg.act, s).v;
    }
    prev = &ws.a[l];
  }
  for (std::size_t k = 0; k < cfg.n_heads; ++k) {
    const auto& hw = p.head_w[k];
    for (std::size_t i = 0; i < cfg.dim; ++i) {
      double s = p.head_b[k][i];
      const double* row = hw.a.data() + i * hw.cols;
      for (std::size_t j = 0; j < hw.cols; ++j) s += row[j] * (*prev)[j];
      ws.y.heads[k][i] = s;
    }
  }
}

FieldEval forward(const ModelParams& p, std::span<const double> x,
                  std::span<const double> tvec) {
  MlpWorkspace ws;
  forward_ws(p, x, tvec, ws);
  return ws.y;
}

void jvp_ws(const ModelParams& p, std::span<const double> dx,
            std::span<const double> dt, std::span<const double> tvec,
            MlpWorkspace& ws) {
  const auto& cfg = p.cfg;
  if (dx.size() != cfg.dim || dt.size() != cfg.n_heads)
    throw ParamError("jvp: direction dimension mismatch");
  encode_tangent(cfg, tvec, dx, dt, ws.din);
  ws.dt_raw.assign(dt.begin(), dt.end());
  const Vec* prev = &ws.din;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const auto& wl = p.w[l];
    for (std::size_t i = 0; i < cfg.width; ++i) {
      double s = 0.0;
      const double* row = wl.a.data() + i * wl.cols;
      for (std::size_t j = 0; j < wl.cols; ++j) s += row[j] * (*prev)[j];
      ws.dz[l][i] = s;
      ws.da[l][i] = act_eval(cfg.act, ws.z[l][i]).d1 * s;
    }
    prev = &ws.da[l];
  }
  for (std::size_t k = 0; k < cfg.n_heads; ++k) {
    const auto& hw = p.head_w[k];
    for (std::size_t i = 0; i < cfg.dim; ++i) {
      double s = 0.0;
      const double* row = hw.a.data() + i * hw.cols;
      for (std::size_t j = 0; j < hw.cols; ++j) s += row[j] * (*prev)[j];
      ws.dy.heads[k][i] = s;
    }
  }
}

FieldEval jvp(const ModelParams& p, std::span<const double> x,
              std::span<const double> tvec, std::span<const double> dx,
              std::span<const double> dt) {
  MlpWorkspace ws;
  forward_ws(p, x, tvec, ws);
  jvp_ws(p, dx, dt, tvec, ws);
  return ws.dy;
}

void backward_ws(const ModelParams& p, MlpWorkspace& ws,
                 const std::vector<Vec>& upstream, ModelParams& grad,
                 Vec* input_grad) {
  const auto& cfg = p.cfg;
  const std::size_t last = cfg.depth - 1;
  std::fill(ws.la[last].begin(), ws.la[last].end(), 0.0);
  for (std::size_t k = 0; k < cfg.n_heads; ++k) {
    if (k < upstream.size() && !upstream[k].empty()) {
      const Vec& up = upstream[k];
      auto& hw = grad.head_w[k];
      for (std::size_t i = 0; i < cfg.dim; ++i) {
        const double u = up[i];
        grad.head_b[k][i] += u;
        double* row = hw.a.data() + i * hw.cols;
        const double* hwrow = p.head_w[k].a.data() + i * p.head_w[k].cols;
        for (std::size_t j = 0; j < cfg.width; ++j) {
          row[j] += u * ws.a[last][j];
          ws.la[last][j] += u * hwrow[j];
        }
      }
    }
  }
  for (std::size_t l = last + 1; l-- > 0;) {
    const Vec& prev = l == 0 ? ws.in : ws.a[l - 1];
    for (std::size_t i = 0; i < cfg.width; ++i)
      ws.lz[l][i] = act_eval(cfg.act, ws.z[l][i]).d1 * ws.la[l][i];
    auto& gw = grad.w[l];
    for (std::size_t i = 0; i < cfg.width; ++i) {
      const double lz = ws.lz[l][i];
      grad.b[l][i] += lz;
      double* row = gw.a.data() + i * gw.cols;
      for (std::size_t j = 0; j < gw.cols; ++j) row[j] += lz * prev[j];
    }
    if (l > 0) {
      std::fill(ws.la[l - 1].begin(), ws.la[l - 1].end(), 0.0);
      const auto& wl = p.w[l];
      for (std::size_t i = 0; i < cfg.width; ++i) {
        const double lz = ws.lz[l][i];
        const double* row = wl.a.data() + i * wl.cols;
        for (std::size_t j = 0; j < wl.cols; ++j) ws.la[l - 1][j] += lz * row[j];
      }
    } else if (input_grad) {
      Vec le(cfg.input_width(), 0.0);
      const auto& w0 = p.w[0];
      for (std::size_t i = 0; i < cfg.width; ++i) {
        const double lz = ws.lz[0][i];
        const double* row = w0.a.data() + i * w0.cols;
        for (std::size_t j = 0; j < w0.cols; ++j) le[j] += lz * row[j];
      }
      Vec tv(cfg.n_heads);
      for (std::size_t i = 0; i < cfg.n_heads; ++i)
        tv[i] = ws.in[cfg.dim + i * cfg.per_param_features()];
      decode_adjoint(cfg, tv, le, *input_grad);
    }
  }
}

void backward(const ModelParams& p, const std::vector<Vec>& xs,
              const std::vector<Vec>& tvecs,
              const std::vector<std::vector<Vec>>& upstreams, ModelParams& grad) {
  if (xs.size() != tvecs.size() || xs.size() != upstreams.size())
    throw ParamError("backward: batch size mismatch");
  MlpWorkspace ws;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    forward_ws(p, xs[k], tvecs[k], ws);
    backward_ws(p, ws, upstreams[k], grad);
  }
}

void jvp_backward_ws(const ModelParams& p, std::span<const double> tvec,
                     MlpWorkspace& ws, const std::vector<Vec>& upstream_tangent,
                     ModelParams& grad, Vec* dir_grad, Vec* input_grad) {
  const auto& cfg = p.cfg;
  const std::size_t last = cfg.depth - 1;
  std::fill(ws.la[last].begin(), ws.la[last].end(), 0.0);
  std::fill(ws.lda[last].begin(), ws.lda[last].end(), 0.0);
  for (std::size_t k = 0; k < cfg.n_heads; ++k) {
    if (k < upstream_tangent.size() && !upstream_tangent[k].empty()) {
      const Vec& up = upstream_tangent[k];
      auto& hw = grad.head_w[k];
      for (std::size_t i = 0; i < cfg.dim; ++i) {
        const double u = up[i];
        double* row = hw.a.data() + i * hw.cols;
        const double* hwrow = p.head_w[k].a.data() + i * p.head_w[k].cols;
        for (std::size_t j = 0; j < cfg.width; ++j) {
          row[j] += u * ws.da[last][j];
          ws.lda[last][j] += u * hwrow[j];
        }
      }
    }
  }
  for (std::size_t l = last + 1; l-- > 0;) {
    const Vec& prev_a = l == 0 ? ws.in : ws.a[l - 1];
    const Vec& prev_da = l == 0 ? ws.din : ws.da[l - 1];
    for (std::size_t i = 0; i < cfg.width; ++i) {
      const ActEval ae = act_eval(cfg.act, ws.z[l][i]);
      ws.ldz[l][i] = ae.d1 * ws.lda[l][i];
      ws.lz[l][i] = ae.d1 * ws.la[l][i] + ae.d2 * ws.dz[l][i] * ws.lda[l][i];
    }
    auto& gw = grad.w[l];
    for (std::size_t i = 0; i < cfg.width; ++i) {
      const double lz = ws.lz[l][i];
      const double ldz = ws.ldz[l][i];
      grad.b[l][i] += lz;
      double* row = gw.a.data() + i * gw.cols;
      for (std::size_t j = 0; j < gw.cols; ++j)
        row[j] += lz * prev_a[j] + ldz * prev_da[j];
    }
    if (l > 0) {
      std::fill(ws.la[l - 1].begin(), ws.la[l - 1].end(), 0.0);
      std::fill(ws.lda[l - 1].begin(), ws.lda[l - 1].end(), 0.0);
      const auto& wl = p.w[l];
      for (std::size_t i = 0; i < cfg.width; ++i) {
        const double lz = ws.lz[l][i];
        const double ldz = ws.ldz[l][i];
        const double* row = wl.a.data() + i * wl.cols;
        for (std::size_t j = 0; j < wl.cols; ++j) {
          ws.la[l - 1][j] += lz * row[j];
          ws.lda[l - 1][j] += ldz * row[j];
        }
      }
    } else {
      if (dir_grad || input_grad) {
        Vec le(cfg.input_width(), 0.0), lde(cfg.input_width(), 0.0);
        const auto& w0 = p.w[0];
        for (std::size_t i = 0; i < cfg.width; ++i) {
          const double lz = ws.lz[0][i];
          const double ldz = ws.ldz[0][i];
          const double* row = w0.a.data() + i * w0.cols;
          for (std::size_t j = 0; j < w0.cols; ++j) {
            le[j] += lz * row[j];
            lde[j] += ldz * row[j];
          }
        }
        Vec dir, primal_extra, primal;
        decode_tangent_adjoint(cfg, tvec, ws.dt_raw, lde, dir, primal_extra);
        decode_adjoint(cfg, tvec, le, primal);
        for (std::size_t i = 0; i < primal.size(); ++i) primal[i] += primal_extra[i];
        if (dir_grad) *dir_grad = std::move(dir);
        if (input_grad) *input_grad = std::move(primal);
      }
    }
  }
}

Vec lie_residual(const VectorField& f, std::size_t i, std::size_t j,
                 std::span<const double> x, std::span<const double> tvec) {
  const std::size_t n = f.n_heads();
  const std::size_t d = f.dim();
  if (i >= n || j >= n || i == j) throw ParamError("lie_residual: bad head pair");

  std::vector<Vec> u;
  f.eval(x, tvec, u);

  Vec neg_uj(d), neg_ui(d);
  for (std::size_t k = 0; k < d; ++k) {
    neg_uj[k] = -u[j][k];
    neg_ui[k] = -u[i][k];
  }
  Vec ei(n, 0.0), ej(n, 0.0);
  ei[i] = 1.0;
  ej[j] = 1.0;

  std::vector<Vec> ja, jb;
  f.eval_jvp(x, tvec, neg_uj, ej, ja);  // d_{t_j} u_i - (grad_x u_i) u_j (head i)
  f.eval_jvp(x, tvec, neg_ui, ei, jb);  // d_{t_i} u_j - (grad_x u_j) u_i (head j)

  Vec r(d);
  for (std::size_t k = 0; k < d; ++k) r[k] = ja[i][k] - jb[j][k];
  return r;
}

void MlpField::eval(std::span<const double> x, std::span<const double> tvec,
                    std::vector<Vec>& out) const {
  MlpWorkspace ws;
  forward_ws(p_, x, tvec, ws);
  out = ws.y.heads;
}

void MlpField::eval_jvp(std::span<const double> x, std::span<const double> tvec,
                        std::span<const double> dx, std::span<const double> dt,
                        std::vector<Vec>& out) const {
  MlpWorkspace ws;
  forward_ws(p_, x, tvec, ws);
  jvp_ws(p_, dx, dt, tvec, ws);
  out = ws.dy.heads;
}

AnalyticHead AnalyticHead::constant(Vec c) {
  AnalyticHead h;
  h.kind = Kind::constant;
  h.c = std::move(c);
  return h;
}

AnalyticHead AnalyticHead::linear(Matrix a) {
  AnalyticHead h;
  h.kind = Kind::linear;
  h.a = std::move(a);
  return h;
}

void AnalyticField::eval(std::span<const double> x, std::span<const double> tvec,
                         std::vector<Vec>& out) const {
  out.resize(heads_.size());
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const auto& h = heads_[k];
    switch (h.kind) {
      case AnalyticHead::Kind::constant: out[k] = h.c; break;
      case AnalyticHead::Kind::linear: out[k] = matvec(h.a, x); break;
      case AnalyticHead::Kind::custom: out[k] = h.fn(x, tvec); break;
    }
  }
}

void AnalyticField::eval_jvp(std::span<const double> x,
                             std::span<const double> tvec,
                             std::span<const double> dx,
                             std::span<const double> dt,
                             std::vector<Vec>& out) const {
  out.resize(heads_.size());
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const auto& h = heads_[k];
    switch (h.kind) {
      case AnalyticHead::Kind::constant: out[k].assign(dim_, 0.0); break;
      case AnalyticHead::Kind::linear: out[k] = matvec(h.a, dx); break;
      case AnalyticHead::Kind::custom:
        if (!h.fn_jvp) throw ParamError("AnalyticField: custom head lacks jvp");
        out[k] = h.fn_jvp(x, tvec, dx, dt);
        break;
    }
  }
}

CompositeField::CompositeField(std::vector<std::shared_ptr<const VectorField>> parts)
    : parts_(std::move(parts)) {
  if (parts_.empty()) throw ParamError("CompositeField: no parts");
  dim_ = parts_[0]->dim();
  for (const auto& p : parts_) {
    if (p->dim() != dim_) throw ParamError("CompositeField: dimension mismatch");
    if (p->n_heads() != 1)
      throw ParamError("CompositeField: parts must be single-parameter fields");
  }
}

void CompositeField::eval(std::span<const double> x, std::span<const double> tvec,
                          std::vector<Vec>& out) const {
  out.resize(parts_.size());
  std::vector<Vec> one;
  for (std::size_t k = 0; k < parts_.size(); ++k) {
    const double tk = tvec[k];
    parts_[k]->eval(x, std::span<const double>(&tk, 1), one);
    out[k] = one[0];
  }
}

void CompositeField::eval_jvp(std::span<const double> x,
                              std::span<const double> tvec,
                              std::span<const double> dx,
                              std::span<const double> dt,
                              std::vector<Vec>& out) const {
  out.resize(parts_.size());
  std::vector<Vec> one;
  for (std::size_t k = 0; k < parts_.size(); ++k) {
    const double tk = tvec[k];
    const double dtk = dt[k];
    parts_[k]->eval_jvp(x, std::span<const double>(&tk, 1), dx,
                        std::span<const double>(&dtk, 1), one);
    out[k] = one[0];
  }
}

void save_checkpoint(const ModelParams& p, const std::string& path,
                     const std::string& config_echo, std::uint64_t seed) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  const auto& cfg = p.cfg;
  f << "pifm-checkpoint v1\n";
  f << "n " << cfg.n_heads << "\n";
  f << "dim " << cfg.dim << "\n";
  f << "width " << cfg.width << "\n";
  f << "depth " << cfg.depth << "\n";
  f << "activation " << activation_name(cfg.act) << "\n";
  f << "fourier " << (cfg.fourier ? 1 : 0) << " " << cfg.fourier_bands << "\n";
  f << "seed " << seed << "\n";
  f << "config " << config_echo << "\n";
  auto dump_matrix = [&](const char* tag, std::size_t idx, const Matrix& m) {
    f << tag << " " << idx << " " << m.rows << " " << m.cols << "\n";
    for (std::size_t i = 0; i < m.rows; ++i) {
      for (std::size_t j = 0; j < m.cols; ++j)
        f << (j ? " " : "") << format_double(m(i, j));
      f << "\n";
    }
  };
  auto dump_vec = [&](const char* tag, std::size_t idx, const Vec& v) {
    f << tag << " " << idx << " " << v.size() << "\n";
    for (std::size_t j = 0; j < v.size(); ++j)
      f << (j ? " " : "") << format_double(v[j]);
    f << "\n";
  };
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    dump_matrix("W", l, p.w[l]);
    dump_vec("B", l, p.b[l]);
  }
  for (std::size_t k = 0; k < cfg.n_heads; ++k) {
    dump_matrix("HW", k, p.head_w[k]);
    dump_vec("HB", k, p.head_b[k]);
  }
  f << "end\n";
  if (!f) throw IoError("write failed: " + path);
}

namespace {

template <class T>
void expect_read(std::istream& f, T& out, const std::string& what,
                 const std::string& path) {
  if (!(f >> out))
    throw IoError("checkpoint load: truncated or corrupt " + what + " in " + path);
}

void expect_key(std::istream& f, const std::string& key, const std::string& path) {
  std::string k;
  expect_read(f, k, "key '" + key + "'", path);
  if (k != key)
    throw IoError("checkpoint load: expected '" + key + "', got '" + k + "' in " +
                  path);
}

}  // namespace

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic, version;
  f >> magic >> version;
  if (magic != "pifm-checkpoint")
    throw IoError("not a pifm checkpoint: " + path);
  if (version != "v1")
    throw IoError("unsupported checkpoint version '" + version + "' in " + path);

  Checkpoint ck;
  MlpConfig cfg;
  std::string act_name;
  int fourier_flag = 0;
  expect_key(f, "n", path);
  expect_read(f, cfg.n_heads, "n", path);
  expect_key(f, "dim", path);
  expect_read(f, cfg.dim, "dim", path);
  expect_key(f, "width", path);
  expect_read(f, cfg.width, "width", path);
  expect_key(f, "depth", path);
  expect_read(f, cfg.depth, "depth", path);
  expect_key(f, "activation", path);
  expect_read(f, act_name, "activation", path);
  cfg.act = activation_from(act_name);
  expect_key(f, "fourier", path);
  expect_read(f, fourier_flag, "fourier", path);
  expect_read(f, cfg.fourier_bands, "fourier_bands", path);
  cfg.fourier = fourier_flag != 0;
  expect_key(f, "seed", path);
  expect_read(f, ck.seed, "seed", path);
  expect_key(f, "config", path);
  std::getline(f, ck.config_echo);
  if (!ck.config_echo.empty() && ck.config_echo.front() == ' ')
    ck.config_echo.erase(ck.config_echo.begin());

  ck.params.cfg = cfg;
  ck.params.w.resize(cfg.depth);
  ck.params.b.resize(cfg.depth);
  ck.params.head_w.resize(cfg.n_heads);
  ck.params.head_b.resize(cfg.n_heads);

  auto read_matrix = [&](const char* tag, std::size_t idx, Matrix& m,
                         std::size_t want_rows, std::size_t want_cols) {
    expect_key(f, tag, path);
    std::size_t got_idx, rows, cols;
    expect_read(f, got_idx, "index", path);
    expect_read(f, rows, "rows", path);
    expect_read(f, cols, "cols", path);
    if (got_idx != idx || rows != want_rows || cols != want_cols)
      throw IoError("checkpoint load: shape corruption at " + std::string(tag) +
                    " " + std::to_string(idx) + " in " + path);
    m = Matrix(rows, cols);
    for (auto& v : m.a) expect_read(f, v, "matrix entry", path);
  };
  auto read_vec = [&](const char* tag, std::size_t idx, Vec& v,
                      std::size_t want_len) {
    expect_key(f, tag, path);
    std::size_t got_idx, len;
    expect_read(f, got_idx, "index", path);
    expect_read(f, len, "length", path);
    if (got_idx != idx || len != want_len)
      throw IoError("checkpoint load: shape corruption at " + std::string(tag) +
                    " " + std::to_string(idx) + " in " + path);
    v.assign(len, 0.0);
    for (auto& e : v) expect_read(f, e, "vector entry", path);
  };

  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t fan_in = l == 0 ? cfg.input_width() : cfg.width;
    read_matrix("W", l, ck.params.w[l], cfg.width, fan_in);
    read_vec("B", l, ck.params.b[l], cfg.width);
  }
  for (std::size_t k = 0; k < cfg.n_heads; ++k) {
    read_matrix("HW", k, ck.params.head_w[k], cfg.dim, cfg.width);
    read_vec("HB", k, ck.params.head_b[k], cfg.dim);
  }
  expect_key(f, "end", path);
  return ck;
}

}  // namespace pifm
