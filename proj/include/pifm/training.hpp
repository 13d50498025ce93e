#pragma once

#include <optional>

#include "pifm/field_model.hpp"
#include "pifm/transport.hpp"

namespace pifm {

struct TrainConfig {
  std::size_t n = 2;
  std::size_t batch = 256;
  std::size_t steps = 4000;
  double lr = 2e-4;
  double sigma = 0.05;   // conditional-path std dev
  double lambda = 0.0;   // path-independence regularization weight
  CouplingMode coupling = CouplingMode::ot_to_source;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1;
  std::size_t width = 64;
  std::size_t depth = 3;
  Activation activation = Activation::silu;
  bool fourier = false;
  std::size_t fourier_bands = 4;
  double clip_norm = 1.0;  // on the total gradient; 0 disables
  std::size_t warmup = 0;  // linear warm-up steps

  void validate() const;
  MlpConfig mlp() const;
  std::string echo() const;  // key=value;... single line
};

struct LossBreakdown {
  double fm = 0.0;
  double pi = 0.0;
  double total = 0.0;
};

/// mu(z, t) = a + sum_i t_i (b_i - a).
Vec cond_mu(const CoupledTuple& z, std::span<const double> tvec);

/// x = mu + sigma * xi, xi standard normal per coordinate.
Vec sample_conditional_x(const CoupledTuple& z, std::span<const double> tvec,
                         double sigma, RngStream& rng);

/// Conditional fields are constant: field i = b_i - a.
std::vector<Vec> cond_fields(const CoupledTuple& z);

/// One training batch: tuples plus the sampled (tvec, x) per tuple.
struct TrainBatch {
  std::vector<CoupledTuple> tuples;
  std::vector<Vec> tvecs;
  std::vector<Vec> xs;
  std::size_t size() const { return tuples.size(); }
};

TrainBatch make_train_batch(std::vector<CoupledTuple> tuples, std::size_t n,
                            double sigma, RngStream& tvec_rng,
                            RngStream& noise_rng);

/// Mean over the batch of sum_i ||u_i(x,t) - (b_i - a)||^2. Gradients are
/// accumulated into *grad scaled by grad_scale when grad != nullptr.
double fm_loss(const ModelParams& p, const TrainBatch& batch, ModelParams* grad,
               double grad_scale = 1.0);

/// Mean over batch and head pairs of ||lie_residual(i,j,x,t)||^2, with exact
/// gradients via reverse mode through the two directional-derivative passes.
double pi_loss(const ModelParams& p, const TrainBatch& batch, ModelParams* grad,
               double grad_scale = 1.0);

/// Sampleable training data: a shape (fresh i.i.d. draw per step) or a fixed
/// cloud (uniform resampling with replacement).
struct DataSource {
  std::optional<ShapeSpec> shape;
  std::optional<PointCloud> cloud;

  static DataSource of(ShapeSpec s);
  static DataSource of(PointCloud c);
  std::size_t dim() const;
  PointCloud sample(std::size_t n, RngStream& rng) const;
};

struct TrainSpec {
  DataSource source;
  std::vector<DataSource> targets;  // n entries; ignored under prescribed maps
  std::vector<AffineMap> maps;      // n entries for prescribed coupling
};

struct TrainResult {
  ModelParams params;
  std::vector<LossBreakdown> history;
};

/// Algorithm: per step sample a coupled batch, (t ~ U[0,1]^n, x ~ p(.|z)),
/// take one adaptive-moment step on L_FM + lambda * L_Pi with gradient
/// clipping. Deterministic given the seed.
TrainResult train(const TrainConfig& cfg, const TrainSpec& spec);

/// Single-parameter baseline (classic conditional flow matching); identical
/// to train() with n = 1 and lambda = 0.
TrainResult train_cfm(const TrainConfig& cfg, const DataSource& source,
                      const DataSource& target);

void write_loss_csv(const std::vector<LossBreakdown>& history,
                    const std::string& path);

const char* coupling_name(CouplingMode m);
CouplingMode coupling_from(const std::string& name);

}  // namespace pifm
