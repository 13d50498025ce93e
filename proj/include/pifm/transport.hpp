#pragma once

#include <optional>

#include "pifm/geometry.hpp"

namespace pifm {

/// C[i][j] = ||x_i - y_j||^2.
Matrix squared_cost_matrix(const PointCloud& x, const PointCloud& y);

/// Exact minimum-cost assignment (Jonker-Volgenant shortest augmenting
/// paths). Among cost ties, returns the lexicographically smallest
/// permutation, found by restricting to the zero-reduced-cost graph.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

struct SinkhornResult {
  Matrix plan;            // row sums = src weights, col sums = tgt weights
  double marginal_error;  // max L1 deviation of either marginal
  std::size_t iterations;
  bool converged;
};

/// Entropic OT in the log domain; never throws on slow convergence, the
/// achieved marginal error is reported in the result.
SinkhornResult sinkhorn(const Matrix& cost, const Vec& src_w, const Vec& tgt_w,
                        double eps, std::size_t max_iter = 1000,
                        double tol = 1e-9);

/// Joint sample z = (a, b_1..b_n) from the source and the n targets.
struct CoupledTuple {
  Vec a;
  std::vector<Vec> b;
};

enum class CouplingMode { independent, ot_to_source, prescribed };

struct AffineMap {
  Matrix a;
  Vec r;
  Vec operator()(std::span<const double> x) const;
};

/// Exact assignment is the default pairing solver; entropic pairing (sample
/// b_i from the Sinkhorn plan row) is the opt-in alternative for batches
/// where the cubic assignment cost bites.
struct CoupleOptions {
  bool entropic = false;
  double sinkhorn_eps = 0.05;
};

/// Builds training tuples from a source batch.
///   independent:  per-target random index pairing
///   ot_to_source: per-target assignment against the source batch
///   prescribed:   b_i = T_i(a), targets ignored
std::vector<CoupledTuple> minibatch_couple(
    const PointCloud& a_batch, const std::vector<PointCloud>& target_batches,
    CouplingMode mode, const std::vector<AffineMap>& maps, RngStream& rng,
    const CoupleOptions& opt = {});

/// Exact W2 between equal-size uniform clouds via linear assignment.
double w2_exact(const PointCloud& x, const PointCloud& y);

/// Root-mean of squared 1-D W2 distances over random unit projections.
/// Works for unequal sizes and general weights. For distributions that
/// differ by a translation this underestimates w2_exact by a factor
/// sqrt(dim).
double sliced_w2(const PointCloud& x, const PointCloud& y,
                 std::size_t n_projections, RngStream& rng);

struct BarycenterOptions {
  std::size_t support_size = 0;          // 0: size of first marginal
  std::optional<PointCloud> init;        // default: copy of first marginal
  double tol = 1e-6;                     // mean support movement
  std::size_t max_iter = 200;
  double sinkhorn_eps = 1e-2;            // only for non-assignment plans
};

struct BarycenterResult {
  PointCloud support;                    // uniform weights
  std::size_t iterations = 0;
  double final_movement = 0.0;
  std::vector<double> objective;         // J per iteration, non-increasing
  double wall_ms = 0.0;
};

/// Free-support fixed point: alternate OT plans to each marginal with the
/// barycentric-projection update x_i <- sum_j lambda_j (sum_k pi_j[i,k] y_jk)/w_i.
/// Plans are exact permutations whenever marginal size == support size with
/// uniform weights, entropic otherwise.
BarycenterResult free_support_barycenter(const std::vector<PointCloud>& marginals,
                                         const Vec& lambdas,
                                         const BarycenterOptions& opt = {});

void write_barycenter_report(const BarycenterResult& r, const std::string& path);

/// Dense plan (or any matrix) as CSV rows; permutation plans convert via
/// plan_from_permutation.
void write_plan_csv(const Matrix& plan, const std::string& path);
Matrix plan_from_permutation(const std::vector<std::size_t>& sigma);

}  // namespace pifm
