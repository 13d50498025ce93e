#include "pifm/training.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace pifm {

void TrainConfig::validate() const {
  if (n == 0) throw ParamError("TrainConfig: n must be >= 1");
  if (batch == 0) throw ParamError("TrainConfig: batch must be >= 1");
  if (sigma < 0.0) throw ParamError("TrainConfig: sigma must be >= 0");
  if (lambda < 0.0) throw ParamError("TrainConfig: lambda must be >= 0");
  if (lr <= 0.0) throw ParamError("TrainConfig: lr must be > 0");
  if (width == 0 || depth == 0)
    throw ParamError("TrainConfig: width and depth must be >= 1");
}

MlpConfig TrainConfig::mlp() const {
  MlpConfig m;
  m.n_heads = n;
  m.width = width;
  m.depth = depth;
  m.act = activation;
  m.fourier = fourier;
  m.fourier_bands = fourier_bands;
  return m;  // dim filled by train() from the data
}

std::string TrainConfig::echo() const {
  std::ostringstream s;
  s << "n=" << n << ";batch=" << batch << ";steps=" << steps
    << ";lr=" << format_double(lr) << ";sigma=" << format_double(sigma)
    << ";lambda=" << format_double(lambda) << ";coupling=" << coupling_name(coupling)
    << ";beta1=" << format_double(beta1) << ";beta2=" << format_double(beta2)
    << ";eps=" << format_double(eps) << ";seed=" << seed << ";width=" << width
    << ";depth=" << depth << ";activation=" << activation_name(activation)
    << ";fourier=" << (fourier ? 1 : 0) << ";clip=" << format_double(clip_norm)
    << ";warmup=" << warmup;
  return s.str();
}

const char* coupling_name(CouplingMode m) {
  switch (m) {
    case CouplingMode::independent: return "independent";
    case CouplingMode::ot_to_source: return "ot";
    case CouplingMode::prescribed: return "prescribed";
  }
  return "?";
}

CouplingMode coupling_from(const std::string& name) {
  if (name == "independent") return CouplingMode::independent;
  if (name == "ot" || name == "ot-to-source") return CouplingMode::ot_to_source;
  if (name == "prescribed") return CouplingMode::prescribed;
  throw ParamError("unknown coupling mode: " + name);
}

Vec cond_mu(const CoupledTuple& z, std::span<const double> tvec) {
  if (tvec.size() != z.b.size()) throw ParamError("cond_mu: tvec size mismatch");
  // (1 - sum t_i) a + sum t_i b_i: same interpolant as a + sum t_i (b_i - a)
  // but recovers the boundary tuples exactly in floating point
  double w0 = 1.0;
  for (double t : tvec) w0 -= t;
  Vec mu(z.a.size());
  for (std::size_t k = 0; k < mu.size(); ++k) mu[k] = w0 * z.a[k];
  for (std::size_t i = 0; i < z.b.size(); ++i) {
    if (z.b[i].size() != z.a.size()) throw ParamError("cond_mu: dim mismatch");
    for (std::size_t k = 0; k < mu.size(); ++k) mu[k] += tvec[i] * z.b[i][k];
  }
  return mu;
}

Vec sample_conditional_x(const CoupledTuple& z, std::span<const double> tvec,
                         double sigma, RngStream& rng) {
  if (sigma < 0.0) throw ParamError("sample_conditional_x: sigma must be >= 0");
  Vec x = cond_mu(z, tvec);
  for (auto& v : x) v += sigma * rng.normal();
  return x;
}

std::vector<Vec> cond_fields(const CoupledTuple& z) {
  std::vector<Vec> f(z.b.size());
  for (std::size_t i = 0; i < z.b.size(); ++i) {
    f[i].resize(z.a.size());
    for (std::size_t k = 0; k < z.a.size(); ++k) f[i][k] = z.b[i][k] - z.a[k];
  }
  return f;
}

TrainBatch make_train_batch(std::vector<CoupledTuple> tuples, std::size_t n,
                            double sigma, RngStream& tvec_rng,
                            RngStream& noise_rng) {
  TrainBatch batch;
  batch.tuples = std::move(tuples);
  batch.tvecs.resize(batch.tuples.size());
  batch.xs.resize(batch.tuples.size());
  for (std::size_t k = 0; k < batch.tuples.size(); ++k) {
    batch.tvecs[k].resize(n);
    for (std::size_t i = 0; i < n; ++i) batch.tvecs[k][i] = tvec_rng.uniform();
    batch.xs[k] = sample_conditional_x(batch.tuples[k], batch.tvecs[k], sigma,
                                       noise_rng);
  }
  return batch;
}

double fm_loss(const ModelParams& p, const TrainBatch& batch, ModelParams* grad,
               double grad_scale) {
  if (batch.size() == 0) throw ParamError("fm_loss: empty batch");
  const std::size_t n = p.cfg.n_heads;
  const std::size_t d = p.cfg.dim;
  const double inv_b = 1.0 / static_cast<double>(batch.size());

  MlpWorkspace ws;
  std::vector<Vec> upstream(n, Vec(d));
  double loss = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& z = batch.tuples[k];
    forward_ws(p, batch.xs[k], batch.tvecs[k], ws);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < d; ++c) {
        const double r = ws.y.heads[i][c] - (z.b[i][c] - z.a[c]);
        loss += inv_b * r * r;
        upstream[i][c] = grad_scale * 2.0 * inv_b * r;
      }
    }
    if (grad) backward_ws(p, ws, upstream, *grad);
  }
  return loss;
}

double pi_loss(const ModelParams& p, const TrainBatch& batch, ModelParams* grad,
               double grad_scale) {
  const std::size_t n = p.cfg.n_heads;
  if (n < 2) throw ParamError("pi_loss: needs n >= 2");
  if (batch.size() == 0) throw ParamError("pi_loss: empty batch");
  const std::size_t d = p.cfg.dim;
  const double n_pairs = static_cast<double>(n * (n - 1) / 2);
  const double w = 1.0 / (static_cast<double>(batch.size()) * n_pairs);

  MlpWorkspace ws;
  Vec neg_uj(d), neg_ui(d), ei(n), ej(n), r(d);
  Vec dir_grad_a, dir_grad_b;
  std::vector<Vec> up(n);
  double loss = 0.0;

  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& x = batch.xs[k];
    const auto& tv = batch.tvecs[k];
    forward_ws(p, x, tv, ws);
    const auto u = ws.y.heads;  // copy; tangent passes reuse the workspace

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        for (std::size_t c = 0; c < d; ++c) {
          neg_uj[c] = -u[j][c];
          neg_ui[c] = -u[i][c];
        }
        std::fill(ei.begin(), ei.end(), 0.0);
        std::fill(ej.begin(), ej.end(), 0.0);
        ei[i] = 1.0;
        ej[j] = 1.0;

        // r = jvp_i(-u_j, e_j) - jvp_j(-u_i, e_i)
        jvp_ws(p, neg_uj, ej, tv, ws);
        r = ws.dy.heads[i];
        jvp_ws(p, neg_ui, ei, tv, ws);
        for (std::size_t c = 0; c < d; ++c) r[c] -= ws.dy.heads[j][c];

        double sq = 0.0;
        for (double v : r) sq += v * v;
        loss += w * sq;
        if (!grad) continue;

        for (auto& uvec : up) uvec.clear();

        // theta-dependence of the two tangent passes (second-order reverse)
        jvp_ws(p, neg_uj, ej, tv, ws);  // restore pass-A tangents
        up[i].resize(d);
        for (std::size_t c = 0; c < d; ++c)
          up[i][c] = grad_scale * 2.0 * w * r[c];
        jvp_backward_ws(p, tv, ws, up, *grad, &dir_grad_a);
        up[i].clear();

        jvp_ws(p, neg_ui, ei, tv, ws);
        up[j].resize(d);
        for (std::size_t c = 0; c < d; ++c)
          up[j][c] = -grad_scale * 2.0 * w * r[c];
        jvp_backward_ws(p, tv, ws, up, *grad, &dir_grad_b);
        up[j].clear();

        // theta-dependence of the directions dx_A = -u_j, dx_B = -u_i
        up[j].assign(d, 0.0);
        up[i].assign(d, 0.0);
        for (std::size_t c = 0; c < d; ++c) {
          up[j][c] = -dir_grad_a[c];
          up[i][c] = -dir_grad_b[c];
        }
        backward_ws(p, ws, up, *grad);
        up[i].clear();
        up[j].clear();
      }
    }
  }
  return loss;
}

DataSource DataSource::of(ShapeSpec s) {
  DataSource d;
  d.shape = std::move(s);
  return d;
}

DataSource DataSource::of(PointCloud c) {
  c.validate();
  DataSource d;
  d.cloud = std::move(c);
  return d;
}

std::size_t DataSource::dim() const {
  if (shape) return shape->dim();
  if (cloud) return cloud->dim;
  throw ParamError("DataSource: empty");
}

PointCloud DataSource::sample(std::size_t n, RngStream& rng) const {
  if (shape) return sample_shape(*shape, n, rng);
  if (!cloud) throw ParamError("DataSource: empty");
  PointCloud out(cloud->dim, n);
  for (std::size_t k = 0; k < n; ++k) {
    auto src = cloud->point(rng.index(cloud->size()));
    std::copy(src.begin(), src.end(), out.point(k).begin());
  }
  return out;
}

namespace {

// Structural walk over (param, grad, m, v); keeps Adam free of flat indexing.
template <class F>
void zip4(ModelParams& p, const ModelParams& g, ModelParams& m, ModelParams& v,
          F&& f) {
  for (std::size_t l = 0; l < p.w.size(); ++l) {
    for (std::size_t i = 0; i < p.w[l].a.size(); ++i)
      f(p.w[l].a[i], g.w[l].a[i], m.w[l].a[i], v.w[l].a[i]);
    for (std::size_t i = 0; i < p.b[l].size(); ++i)
      f(p.b[l][i], g.b[l][i], m.b[l][i], v.b[l][i]);
  }
  for (std::size_t k = 0; k < p.head_w.size(); ++k) {
    for (std::size_t i = 0; i < p.head_w[k].a.size(); ++i)
      f(p.head_w[k].a[i], g.head_w[k].a[i], m.head_w[k].a[i], v.head_w[k].a[i]);
    for (std::size_t i = 0; i < p.head_b[k].size(); ++i)
      f(p.head_b[k][i], g.head_b[k][i], m.head_b[k][i], v.head_b[k][i]);
  }
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const TrainSpec& spec) {
  cfg.validate();
  const std::size_t n = cfg.n;
  if (cfg.coupling == CouplingMode::prescribed) {
    if (spec.maps.size() != n)
      throw ParamError("train: prescribed coupling needs exactly n maps");
  } else if (spec.targets.size() != n) {
    throw ParamError("train: targets length must equal n");
  }
  const std::size_t d = spec.source.dim();

  MlpConfig mcfg = cfg.mlp();
  mcfg.dim = d;
  RngStream params_rng(cfg.seed, "params");
  RngStream data_rng(cfg.seed, "data");
  RngStream noise_rng(cfg.seed, "noise");
  RngStream tvec_rng(cfg.seed, "tvec");
  RngStream couple_rng(cfg.seed, "couple");

  TrainResult res;
  res.params = init_params(mcfg, params_rng);
  res.history.reserve(cfg.steps);

  ModelParams grad = zeros_like(res.params);
  ModelParams m1 = zeros_like(res.params);
  ModelParams m2 = zeros_like(res.params);

  std::vector<PointCloud> tgt_batches(
      cfg.coupling == CouplingMode::prescribed ? 0 : n);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    PointCloud a_batch = spec.source.sample(cfg.batch, data_rng);
    for (std::size_t i = 0; i < tgt_batches.size(); ++i)
      tgt_batches[i] = spec.targets[i].sample(cfg.batch, data_rng);
    auto tuples =
        minibatch_couple(a_batch, tgt_batches, cfg.coupling, spec.maps, couple_rng);
    TrainBatch batch =
        make_train_batch(std::move(tuples), n, cfg.sigma, tvec_rng, noise_rng);

    scale_params(grad, 0.0);
    LossBreakdown lb;
    lb.fm = fm_loss(res.params, batch, &grad);
    lb.pi = cfg.lambda > 0.0 ? pi_loss(res.params, batch, &grad, cfg.lambda) : 0.0;
    lb.total = lb.fm + cfg.lambda * lb.pi;
    res.history.push_back(lb);
    if (!std::isfinite(lb.total))
      throw std::runtime_error("train: non-finite loss at step " +
                               std::to_string(step));

    if (cfg.clip_norm > 0.0) {
      const double gn = grad_norm(grad);
      if (gn > cfg.clip_norm) scale_params(grad, cfg.clip_norm / gn);
    }

    double lr = cfg.lr;
    if (cfg.warmup > 0 && step < cfg.warmup)
      lr *= static_cast<double>(step + 1) / static_cast<double>(cfg.warmup);

    const double t = static_cast<double>(step + 1);
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    zip4(res.params, grad, m1, m2,
         [&](double& pv, const double& gv, double& mv, double& vv) {
           mv = cfg.beta1 * mv + (1.0 - cfg.beta1) * gv;
           vv = cfg.beta2 * vv + (1.0 - cfg.beta2) * gv * gv;
           pv -= lr * (mv / bc1) / (std::sqrt(vv / bc2) + cfg.eps);
         });
  }
  return res;
}

TrainResult train_cfm(const TrainConfig& cfg, const DataSource& source,
                      const DataSource& target) {
  if (cfg.n != 1) throw ParamError("train_cfm: n must be 1");
  if (cfg.coupling == CouplingMode::prescribed)
    throw ParamError("train_cfm: coupling must be independent or ot");
  TrainConfig c = cfg;
  c.lambda = 0.0;
  TrainSpec spec;
  spec.source = source;
  spec.targets = {target};
  return train(c, spec);
}

void write_loss_csv(const std::vector<LossBreakdown>& history,
                    const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "step,fm,pi,total\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    f << i << "," << format_double(history[i].fm) << ","
      << format_double(history[i].pi) << "," << format_double(history[i].total)
      << "\n";
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace pifm
