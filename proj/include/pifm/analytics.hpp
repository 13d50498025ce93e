#pragma once

#include <functional>
#include <optional>

#include "pifm/flow.hpp"
#include "pifm/training.hpp"

namespace pifm {

/// Shared-covariance Gaussian family: means[0] is the source mean, means[i]
/// the i-th target mean.
struct GaussianSpec {
  std::vector<Vec> means;
  Matrix cov;

  std::size_t dim() const { return means.empty() ? 0 : means[0].size(); }
  std::size_t n_targets() const { return means.empty() ? 0 : means.size() - 1; }
  void validate() const;
};

/// Closed form: mean = (1 - sum t_i) m_0 + sum t_i m_i, covariance unchanged.
/// Valid outside the simplex too (the flows are translations).
std::pair<Vec, Matrix> gaussian_barycenter_oracle(const GaussianSpec& spec,
                                                  std::span<const double> tvec);

PointCloud sample_gaussian_oracle(const GaussianSpec& spec,
                                  std::span<const double> tvec, std::size_t n,
                                  RngStream& rng);

/// w2_exact for equal-size uniform clouds up to 1024 points, otherwise
/// sliced W2 with 256 projections on a dedicated stream.
double cloud_metric(const PointCloud& a, const PointCloud& b,
                    std::uint64_t seed = 2024);

/// W2 between two independent draws of the same sampler: the irreducible
/// noise level for any cloud-vs-cloud comparison at this size.
double sampling_floor(const std::function<PointCloud(RngStream&)>& sampler,
                      std::uint64_t seed, std::string_view label);

struct StrategyEndpoint {
  std::string strategy;
  PointCloud cloud;
  double to_reference = -1.0;  // W2 to the reference target, if given
};

struct CommutativityReport {
  Vec tvec;
  std::vector<StrategyEndpoint> endpoints;  // all axis orders + diagonal
  Matrix pairwise;                          // W2 gaps, symmetric, zero diagonal
  double max_gap = 0.0;
};

/// Endpoints of every axis ordering (n! of them, n <= 4) plus the diagonal,
/// with all pairwise gaps. `reference` adds a W2-to-target column.
CommutativityReport commutativity_gap(const VectorField& f,
                                      const PointCloud& source,
                                      std::span<const double> tvec,
                                      std::size_t steps,
                                      const PointCloud* reference = nullptr,
                                      Integrator method = Integrator::euler);

/// Empirical multi-marginal cost of aligned tuples (a, T1(a), T2(a)) at
/// z = (1-t-s) a + t T1(a) + s T2(a).
double pifm_transport_cost(const PointCloud& a, const PointCloud& b,
                           const PointCloud& c, double t, double s);

struct SliceCheck {
  Vec tvec;
  double w2_horizontal = 0.0;  // model endpoint vs (1-t,t) barycenter of A_s,B_s
  double w2_vertical = 0.0;    // model endpoint vs (1-s,s) barycenter of C_t,D_t
  Vec horizontal_mean;         // slice barycenter means, for oracle checks
  Vec vertical_mean;
};

/// n = 2 only. Pushes rho_0/rho_1 along the s-axis (A_s, B_s) and
/// rho_0/rho_2 along the t-axis (C_t, D_t) and compares the model endpoint
/// at (t,s) against the 2-marginal free-support barycenters.
SliceCheck slice_barycenter_check(const VectorField& f, const PointCloud& rho0,
                                  const PointCloud& rho1, const PointCloud& rho2,
                                  double t, double s, std::size_t steps);

struct ComparePoint {
  Vec tvec;
  bool interior = true;        // all barycentric weights >= 0
  std::string oracle;          // "free-support" | "analytic-gaussian" | "none"
  double w2 = -1.0;            // model endpoint vs oracle (when oracle exists)
  double floor = -1.0;         // resampling floor for this comparison
  double wall_model_ms = 0.0;
  double wall_oracle_ms = 0.0;
  PointCloud model_endpoint;   // kept for plotting
  PointCloud oracle_cloud;
};

struct CompareOptions {
  std::size_t eval_n = 512;    // model endpoint size
  std::size_t oracle_n = 256;  // free-support marginal/support size
  std::size_t steps = 100;
  std::uint64_t seed = 7;
  bool compute_floor = true;
  bool keep_clouds = false;
};

/// Per grid point: model endpoint (diagonal strategy) vs the barycenter
/// oracle. Inside the simplex the free-support fixed point applies to any
/// marginals; outside only the analytic Gaussian oracle (when given) does,
/// and points without an oracle are reported with oracle = "none".
std::vector<ComparePoint> barycenter_compare(
    const VectorField& f, const DataSource& source,
    const std::vector<DataSource>& targets, const std::vector<Vec>& grid,
    const std::optional<GaussianSpec>& gauss, const CompareOptions& opt);

/// (t,s) grid over the simplex at the given spacing (t,s >= 0, t+s <= 1).
std::vector<Vec> make_simplex_grid(double spacing);

bool inside_simplex(std::span<const double> tvec, double tol = 1e-9);

}  // namespace pifm
