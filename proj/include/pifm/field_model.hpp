#pragma once

#include <functional>
#include <memory>

#include "pifm/common.hpp"
#include "pifm/rng.hpp"

namespace pifm {

enum class Activation { silu, tanh, identity };

const char* activation_name(Activation a);
Activation activation_from(const std::string& name);

struct MlpConfig {
  std::size_t dim = 2;      // state dimension d
  std::size_t n_heads = 2;  // parameter count n
  std::size_t width = 64;
  std::size_t depth = 3;    // hidden layers
  Activation act = Activation::silu;
  bool fourier = false;          // Fourier features on the parameter inputs
  std::size_t fourier_bands = 4;

  std::size_t per_param_features() const {
    return fourier ? 1 + 2 * fourier_bands : 1;
  }
  std::size_t input_width() const {
    return dim + n_heads * per_param_features();
  }
};

/// Shared-backbone MLP with one linear output head per flow parameter.
/// Layer l: z_l = W_l a_{l-1} + b_l, a_l = act(z_l); head i: y_i = H_i a_L + h_i.
struct ModelParams {
  MlpConfig cfg;
  std::vector<Matrix> w;       // depth entries
  std::vector<Vec> b;          // depth entries
  std::vector<Matrix> head_w;  // n entries, dim x width
  std::vector<Vec> head_b;     // n entries, dim
};

ModelParams init_params(const MlpConfig& cfg, RngStream& rng);
ModelParams init_params(std::size_t n, std::size_t d, std::size_t width,
                        std::size_t depth, RngStream& rng,
                        Activation act = Activation::silu);

/// Same shapes as the model, all zeros. Gradient buffers reuse ModelParams.
ModelParams zeros_like(const ModelParams& p);

std::size_t param_count(const ModelParams& p);
double* param_at(ModelParams& p, std::size_t idx);  // flat indexing, test use
void scale_params(ModelParams& p, double s);
void axpy_params(ModelParams& y, const ModelParams& x, double alpha);
double grad_norm(const ModelParams& g);

struct FieldEval {
  std::vector<Vec> heads;  // n vectors in R^d
};

/// Per-sample caches; reuse one workspace per thread in hot loops.
struct MlpWorkspace {
  Vec in, din, dt_raw;
  std::vector<Vec> z, a;      // forward
  std::vector<Vec> dz, da;    // tangent
  std::vector<Vec> lz, la;    // primal adjoints
  std::vector<Vec> ldz, lda;  // tangent adjoints
  FieldEval y, dy;
};

/// Forward pass; fills ws.in/z/a/y.
void forward_ws(const ModelParams& p, std::span<const double> x,
                std::span<const double> tvec, MlpWorkspace& ws);
FieldEval forward(const ModelParams& p, std::span<const double> x,
                  std::span<const double> tvec);

/// Exact directional derivative along (dx, dt); requires forward_ws first.
/// Fills ws.din/dz/da/dy.
void jvp_ws(const ModelParams& p, std::span<const double> dx,
            std::span<const double> dt, std::span<const double> tvec,
            MlpWorkspace& ws);
FieldEval jvp(const ModelParams& p, std::span<const double> x,
              std::span<const double> tvec, std::span<const double> dx,
              std::span<const double> dt);

/// Reverse mode for sum_i upstream_i . y_i; accumulates into grad.
/// Empty upstream entries mean zero. input_grad, if given, receives the
/// adjoint of (x, tvec) (size dim + n).
void backward_ws(const ModelParams& p, MlpWorkspace& ws,
                 const std::vector<Vec>& upstream, ModelParams& grad,
                 Vec* input_grad = nullptr);

/// Batch form: exact parameter gradients of the sum over the batch of
/// sum_i upstream_{k,i} . y_i(x_k, t_k).
void backward(const ModelParams& p, const std::vector<Vec>& xs,
              const std::vector<Vec>& tvecs,
              const std::vector<std::vector<Vec>>& upstreams, ModelParams& grad);

/// Reverse mode THROUGH the jvp: treats the head tangents dy as outputs and
/// accumulates d(sum_i upstream_i . dy_i)/dtheta into grad. Also returns the
/// adjoint of the direction (dir_grad, size dim + n) and of the primal input
/// (input_grad). Requires forward_ws + jvp_ws on the same workspace.
void jvp_backward_ws(const ModelParams& p, std::span<const double> tvec,
                     MlpWorkspace& ws, const std::vector<Vec>& upstream_tangent,
                     ModelParams& grad, Vec* dir_grad = nullptr,
                     Vec* input_grad = nullptr);

/// Abstract n-head vector field u^(i)(x, tvec), differentiable in the joint
/// input. Implemented by trained models, analytic test fields, and composed
/// single-parameter baselines.
class VectorField {
 public:
  virtual ~VectorField() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t n_heads() const = 0;
  virtual void eval(std::span<const double> x, std::span<const double> tvec,
                    std::vector<Vec>& out) const = 0;
  virtual void eval_jvp(std::span<const double> x, std::span<const double> tvec,
                        std::span<const double> dx, std::span<const double> dt,
                        std::vector<Vec>& out) const = 0;
};

/// r = jvp_i(dx=-u_j, dt=e_j) - jvp_j(dx=-u_i, dt=e_i)
///   = d_{t_j} u_i - d_{t_i} u_j - [u_i, u_j].
/// Zero everywhere iff the pair of fields is integrable.
Vec lie_residual(const VectorField& f, std::size_t i, std::size_t j,
                 std::span<const double> x, std::span<const double> tvec);

class MlpField : public VectorField {
 public:
  explicit MlpField(ModelParams p) : p_(std::move(p)) {}
  std::size_t dim() const override { return p_.cfg.dim; }
  std::size_t n_heads() const override { return p_.cfg.n_heads; }
  void eval(std::span<const double> x, std::span<const double> tvec,
            std::vector<Vec>& out) const override;
  void eval_jvp(std::span<const double> x, std::span<const double> tvec,
                std::span<const double> dx, std::span<const double> dt,
                std::vector<Vec>& out) const override;
  const ModelParams& params() const { return p_; }

 private:
  ModelParams p_;
};

/// Closed-form heads for tests and oracles.
struct AnalyticHead {
  enum class Kind { constant, linear, custom } kind = Kind::constant;
  Vec c;     // constant value
  Matrix a;  // linear: u(x) = A x
  std::function<Vec(std::span<const double>, std::span<const double>)> fn;
  std::function<Vec(std::span<const double>, std::span<const double>,
                    std::span<const double>, std::span<const double>)>
      fn_jvp;

  static AnalyticHead constant(Vec c);
  static AnalyticHead linear(Matrix a);
};

class AnalyticField : public VectorField {
 public:
  AnalyticField(std::size_t dim, std::vector<AnalyticHead> heads)
      : dim_(dim), heads_(std::move(heads)) {}
  std::size_t dim() const override { return dim_; }
  std::size_t n_heads() const override { return heads_.size(); }
  void eval(std::span<const double> x, std::span<const double> tvec,
            std::vector<Vec>& out) const override;
  void eval_jvp(std::span<const double> x, std::span<const double> tvec,
                std::span<const double> dx, std::span<const double> dt,
                std::vector<Vec>& out) const override;

 private:
  std::size_t dim_;
  std::vector<AnalyticHead> heads_;
};

/// n-head field assembled from n independently trained single-parameter
/// fields: head i sees only t_i. Models naive flow composition.
class CompositeField : public VectorField {
 public:
  explicit CompositeField(std::vector<std::shared_ptr<const VectorField>> parts);
  std::size_t dim() const override { return dim_; }
  std::size_t n_heads() const override { return parts_.size(); }
  void eval(std::span<const double> x, std::span<const double> tvec,
            std::vector<Vec>& out) const override;
  void eval_jvp(std::span<const double> x, std::span<const double> tvec,
                std::span<const double> dx, std::span<const double> dt,
                std::vector<Vec>& out) const override;

 private:
  std::size_t dim_;
  std::vector<std::shared_ptr<const VectorField>> parts_;
};

/// Text checkpoint, lossless (shortest exact decimals round-trip bit-for-bit).
struct Checkpoint {
  ModelParams params;
  std::string config_echo;
  std::uint64_t seed = 0;
};

void save_checkpoint(const ModelParams& p, const std::string& path,
                     const std::string& config_echo = "", std::uint64_t seed = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pifm
