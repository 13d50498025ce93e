#include "pifm/transport.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace pifm {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

Matrix squared_cost_matrix(const PointCloud& x, const PointCloud& y) {
  if (x.dim != y.dim) throw ParamError("squared_cost_matrix: dimension mismatch");
  Matrix c(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto xi = x.point(i);
    for (std::size_t j = 0; j < y.size(); ++j)
      c(i, j) = sq_dist(xi, y.point(j));
  }
  return c;
}

namespace {

// Shortest-augmenting-path assignment with dual updates. Fills u, v, and
// col4row; duals satisfy cost[i][j] - u[i] - v[j] >= 0 (up to roundoff)
// with equality on assigned pairs.
void lapjv(const Matrix& cost, std::vector<double>& u, std::vector<double>& v,
           std::vector<std::size_t>& col4row) {
  const std::size_t n = cost.rows;
  u.assign(n, 0.0);
  v.assign(n, 0.0);
  col4row.assign(n, n);
  std::vector<std::size_t> row4col(n, n);

  std::vector<double> shortest(n);
  std::vector<std::size_t> path(n);
  std::vector<std::size_t> remaining(n);
  std::vector<char> sr(n), sc(n);

  for (std::size_t cur_row = 0; cur_row < n; ++cur_row) {
    double min_val = 0.0;
    std::size_t num_remaining = n;
    for (std::size_t j = 0; j < n; ++j) {
      remaining[j] = j;
      shortest[j] = kInf;
      path[j] = cur_row;
    }
    std::fill(sr.begin(), sr.end(), 0);
    std::fill(sc.begin(), sc.end(), 0);

    std::size_t i = cur_row;
    std::size_t sink = n;
    while (sink == n) {
      sr[i] = 1;
      std::size_t index = n;
      double lowest = kInf;
      for (std::size_t it = 0; it < num_remaining; ++it) {
        const std::size_t j = remaining[it];
        const double r = min_val + cost(i, j) - u[i] - v[j];
        if (r < shortest[j]) {
          path[j] = i;
          shortest[j] = r;
        }
        if (shortest[j] < lowest || (shortest[j] == lowest && row4col[j] == n)) {
          lowest = shortest[j];
          index = it;
        }
      }
      min_val = lowest;
      if (!(min_val < kInf)) throw ParamError("solve_assignment: non-finite costs");
      const std::size_t j = remaining[index];
      if (row4col[j] == n)
        sink = j;
      else
        i = row4col[j];
      sc[j] = 1;
      remaining[index] = remaining[--num_remaining];
    }

    u[cur_row] += min_val;
    for (std::size_t ip = 0; ip < n; ++ip)
      if (sr[ip] && ip != cur_row) u[ip] += min_val - shortest[col4row[ip]];
    for (std::size_t jp = 0; jp < n; ++jp)
      if (sc[jp]) v[jp] -= min_val - shortest[jp];

    std::size_t j = sink;
    while (true) {
      const std::size_t ip = path[j];
      row4col[j] = ip;
      std::swap(col4row[ip], j);
      if (ip == cur_row) break;
    }
  }
}

// Can rows [next_row, n) be perfectly matched into the free columns of the
// tight graph? Plain Kuhn augmentation, small sizes only.
bool tight_completable(const std::vector<std::vector<std::size_t>>& tight,
                       std::size_t next_row, std::size_t n,
                       const std::vector<char>& col_used) {
  std::vector<std::size_t> match_col(n, n);  // col -> row
  std::vector<char> visited(n);
  std::size_t matched = 0;

  auto try_row = [&](auto&& self, std::size_t row) -> bool {
    for (std::size_t j : tight[row]) {
      if (col_used[j] || visited[j]) continue;
      visited[j] = 1;
      if (match_col[j] == n || self(self, match_col[j])) {
        match_col[j] = row;
        return true;
      }
    }
    return false;
  };

  for (std::size_t row = next_row; row < n; ++row) {
    std::fill(visited.begin(), visited.end(), 0);
    if (try_row(try_row, row)) ++matched;
  }
  return matched == n - next_row;
}

}  // namespace

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  if (cost.rows != cost.cols) throw ParamError("solve_assignment: non-square cost");
  const std::size_t n = cost.rows;
  if (n == 0) return {};
  for (double c : cost.a)
    if (!std::isfinite(c)) throw ParamError("solve_assignment: non-finite cost");

  std::vector<double> u, v;
  std::vector<std::size_t> col4row;
  lapjv(cost, u, v, col4row);

  double scale = 0.0;
  for (double c : cost.a) scale = std::max(scale, std::abs(c));
  const double tie_eps = 1e-9 * (1.0 + scale);

  // Complementary slackness: optimal permutations are exactly the perfect
  // matchings of the zero-reduced-cost graph.
  std::vector<std::vector<std::size_t>> tight(n);
  bool unique = true;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      if (cost(i, j) - u[i] - v[j] <= tie_eps) tight[i].push_back(j);
    if (tight[i].size() != 1) unique = false;
  }
  if (unique) return col4row;

  std::vector<std::size_t> sigma(n, n);
  std::vector<char> col_used(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t j : tight[i]) {
      if (col_used[j]) continue;
      col_used[j] = 1;
      if (tight_completable(tight, i + 1, n, col_used)) {
        sigma[i] = j;
        placed = true;
        break;
      }
      col_used[j] = 0;
    }
    if (!placed) return col4row;  // tie graph pruned too hard; keep the optimum
  }
  return sigma;
}

namespace {

double logsumexp(const Vec& terms) {
  double m = -kInf;
  for (double t : terms) m = std::max(m, t);
  if (m == -kInf) return -kInf;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

}  // namespace

SinkhornResult sinkhorn(const Matrix& cost, const Vec& src_w, const Vec& tgt_w,
                        double eps, std::size_t max_iter, double tol) {
  if (eps <= 0.0) throw ParamError("sinkhorn: eps must be > 0");
  const std::size_t nr = cost.rows, nc = cost.cols;
  if (src_w.size() != nr || tgt_w.size() != nc)
    throw ParamError("sinkhorn: weight sizes do not match cost");

  Vec log_a(nr), log_b(nc);
  for (std::size_t i = 0; i < nr; ++i)
    log_a[i] = src_w[i] > 0.0 ? std::log(src_w[i]) : -kInf;
  for (std::size_t j = 0; j < nc; ++j)
    log_b[j] = tgt_w[j] > 0.0 ? std::log(tgt_w[j]) : -kInf;

  Vec f(nr, 0.0), g(nc, 0.0);
  Vec terms(std::max(nr, nc));

  SinkhornResult res;
  res.plan = Matrix(nr, nc);
  res.converged = false;
  res.iterations = 0;

  auto compute_plan_and_error = [&]() {
    double err_row = 0.0, err_col = 0.0;
    Vec col_sum(nc, 0.0);
    for (std::size_t i = 0; i < nr; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < nc; ++j) {
        const double e = (f[i] + g[j] - cost(i, j)) / eps;
        const double p = (e == -kInf) ? 0.0 : std::exp(e);
        res.plan(i, j) = p;
        row_sum += p;
        col_sum[j] += p;
      }
      err_row += std::abs(row_sum - src_w[i]);
    }
    for (std::size_t j = 0; j < nc; ++j) err_col += std::abs(col_sum[j] - tgt_w[j]);
    return std::max(err_row, err_col);
  };

  for (std::size_t it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < nr; ++i) {
      if (log_a[i] == -kInf) {
        f[i] = -kInf;
        continue;
      }
      terms.resize(nc);
      for (std::size_t j = 0; j < nc; ++j) terms[j] = (g[j] - cost(i, j)) / eps;
      f[i] = eps * (log_a[i] - logsumexp(terms));
    }
    for (std::size_t j = 0; j < nc; ++j) {
      if (log_b[j] == -kInf) {
        g[j] = -kInf;
        continue;
      }
      terms.resize(nr);
      for (std::size_t i = 0; i < nr; ++i) terms[i] = (f[i] - cost(i, j)) / eps;
      g[j] = eps * (log_b[j] - logsumexp(terms));
    }
    res.iterations = it + 1;
    res.marginal_error = compute_plan_and_error();
    if (res.marginal_error <= tol) {
      res.converged = true;
      break;
    }
  }
  if (!res.converged) res.marginal_error = compute_plan_and_error();
  return res;
}

Vec AffineMap::operator()(std::span<const double> x) const {
  Vec y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) y[i] = dot(a.row(i), x) + r[i];
  return y;
}

std::vector<CoupledTuple> minibatch_couple(
    const PointCloud& a_batch, const std::vector<PointCloud>& target_batches,
    CouplingMode mode, const std::vector<AffineMap>& maps, RngStream& rng,
    const CoupleOptions& opt) {
  const std::size_t batch = a_batch.size();
  const std::size_t d = a_batch.dim;
  if (batch == 0) throw ParamError("minibatch_couple: empty source batch");

  std::size_t n = 0;
  if (mode == CouplingMode::prescribed) {
    n = maps.size();
    if (n == 0) throw ParamError("minibatch_couple: prescribed mode needs maps");
    for (const auto& m : maps)
      if (m.a.rows != d || m.a.cols != d || m.r.size() != d)
        throw ParamError("minibatch_couple: map dimension mismatch");
  } else {
    n = target_batches.size();
    if (n == 0) throw ParamError("minibatch_couple: no target batches");
    for (const auto& t : target_batches) {
      if (t.dim != d) throw ParamError("minibatch_couple: dimension mismatch");
      if (t.size() != batch)
        throw ParamError("minibatch_couple: batch size mismatch");
    }
  }

  std::vector<CoupledTuple> tuples(batch);
  for (std::size_t k = 0; k < batch; ++k) {
    auto p = a_batch.point(k);
    tuples[k].a.assign(p.begin(), p.end());
    tuples[k].b.resize(n);
  }

  switch (mode) {
    case CouplingMode::prescribed: {
      for (std::size_t k = 0; k < batch; ++k)
        for (std::size_t i = 0; i < n; ++i)
          tuples[k].b[i] = maps[i](a_batch.point(k));
      break;
    }
    case CouplingMode::independent: {
      std::vector<std::size_t> perm(batch);
      for (std::size_t i = 0; i < n; ++i) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        for (std::size_t k = batch; k > 1; --k)
          std::swap(perm[k - 1], perm[rng.index(k)]);
        for (std::size_t k = 0; k < batch; ++k) {
          auto q = target_batches[i].point(perm[k]);
          tuples[k].b[i].assign(q.begin(), q.end());
        }
      }
      break;
    }
    case CouplingMode::ot_to_source: {
      for (std::size_t i = 0; i < n; ++i) {
        const Matrix cost = squared_cost_matrix(a_batch, target_batches[i]);
        if (!opt.entropic) {
          auto sigma = solve_assignment(cost);
          for (std::size_t k = 0; k < batch; ++k) {
            auto q = target_batches[i].point(sigma[k]);
            tuples[k].b[i].assign(q.begin(), q.end());
          }
        } else {
          const auto sk = sinkhorn(cost, a_batch.weights,
                                   target_batches[i].weights, opt.sinkhorn_eps);
          for (std::size_t k = 0; k < batch; ++k) {
            // categorical draw from the k-th plan row
            double row = 0.0;
            for (std::size_t j = 0; j < batch; ++j) row += sk.plan(k, j);
            double u = rng.uniform() * row;
            std::size_t pick = batch - 1;
            for (std::size_t j = 0; j < batch; ++j) {
              u -= sk.plan(k, j);
              if (u <= 0.0) {
                pick = j;
                break;
              }
            }
            auto q = target_batches[i].point(pick);
            tuples[k].b[i].assign(q.begin(), q.end());
          }
        }
      }
      break;
    }
  }
  return tuples;
}

double w2_exact(const PointCloud& x, const PointCloud& y) {
  if (x.dim != y.dim) throw ParamError("w2_exact: dimension mismatch");
  if (x.size() != y.size())
    throw ParamError("w2_exact: unequal sizes (use sliced_w2)");
  if (!x.uniform_weights(1e-9) || !y.uniform_weights(1e-9))
    throw ParamError("w2_exact: weights must be uniform");
  const auto sigma = solve_assignment(squared_cost_matrix(x, y));
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    s += sq_dist(x.point(i), y.point(sigma[i]));
  return std::sqrt(s / static_cast<double>(x.size()));
}

namespace {

// Squared 1-D W2 between weighted samples via the quantile coupling.
double w2_sq_1d(std::vector<std::pair<double, double>>& a,
                std::vector<std::pair<double, double>>& b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  std::size_t i = 0, j = 0;
  double wa = a.empty() ? 0.0 : a[0].second;
  double wb = b.empty() ? 0.0 : b[0].second;
  while (i < a.size() && j < b.size()) {
    const double m = std::min(wa, wb);
    const double diff = a[i].first - b[j].first;
    acc += m * diff * diff;
    wa -= m;
    wb -= m;
    if (wa <= 1e-15) {
      ++i;
      if (i < a.size()) wa = a[i].second;
    }
    if (wb <= 1e-15) {
      ++j;
      if (j < b.size()) wb = b[j].second;
    }
  }
  return acc;
}

}  // namespace

double sliced_w2(const PointCloud& x, const PointCloud& y,
                 std::size_t n_projections, RngStream& rng) {
  if (x.dim != y.dim) throw ParamError("sliced_w2: dimension mismatch");
  if (n_projections == 0) throw ParamError("sliced_w2: need >= 1 projection");
  const std::size_t d = x.dim;
  Vec theta(d);
  std::vector<std::pair<double, double>> px(x.size()), py(y.size());
  double acc = 0.0;
  for (std::size_t p = 0; p < n_projections; ++p) {
    double nrm = 0.0;
    do {
      nrm = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        theta[k] = rng.normal();
        nrm += theta[k] * theta[k];
      }
    } while (nrm == 0.0);
    nrm = std::sqrt(nrm);
    for (std::size_t k = 0; k < d; ++k) theta[k] /= nrm;

    for (std::size_t i = 0; i < x.size(); ++i)
      px[i] = {dot(x.point(i), theta), x.weights[i]};
    for (std::size_t j = 0; j < y.size(); ++j)
      py[j] = {dot(y.point(j), theta), y.weights[j]};
    acc += w2_sq_1d(px, py);
  }
  return std::sqrt(acc / static_cast<double>(n_projections));
}

BarycenterResult free_support_barycenter(const std::vector<PointCloud>& marginals,
                                         const Vec& lambdas,
                                         const BarycenterOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  if (marginals.empty()) throw ParamError("free_support_barycenter: no marginals");
  if (lambdas.size() != marginals.size())
    throw ParamError("free_support_barycenter: lambda count mismatch");
  double lsum = 0.0;
  for (double l : lambdas) {
    if (l < 0.0)
      throw ParamError(
          "free_support_barycenter: negative weights are outside the "
          "fixed point's domain (use the analytic Gaussian oracle)");
    lsum += l;
  }
  if (std::abs(lsum - 1.0) > 1e-9)
    throw ParamError("free_support_barycenter: weights must sum to 1");
  const std::size_t d = marginals[0].dim;
  for (const auto& m : marginals) {
    m.validate();
    if (m.dim != d) throw ParamError("free_support_barycenter: dimension mismatch");
  }

  const std::size_t m = opt.support_size ? opt.support_size : marginals[0].size();
  PointCloud x(d, m);
  if (opt.init) {
    if (opt.init->dim != d || opt.init->size() != m)
      throw ParamError("free_support_barycenter: init shape mismatch");
    x = *opt.init;
  } else {
    // deterministic stride subsample of the first marginal
    for (std::size_t i = 0; i < m; ++i) {
      auto src = marginals[0].point((i * marginals[0].size()) / m);
      std::copy(src.begin(), src.end(), x.point(i).begin());
    }
  }

  BarycenterResult res;
  std::vector<Vec> proj(marginals.size());  // barycentric projections, m*d
  PointCloud x_new(d, m);

  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    double objective = 0.0;
    for (std::size_t j = 0; j < marginals.size(); ++j) {
      const auto& marg = marginals[j];
      proj[j].assign(m * d, 0.0);
      const Matrix cost = squared_cost_matrix(x, marg);
      if (marg.size() == m && marg.uniform_weights(1e-9)) {
        const auto sigma = solve_assignment(cost);
        double w2sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          auto y = marg.point(sigma[i]);
          std::copy(y.begin(), y.end(), proj[j].begin() + i * d);
          w2sq += cost(i, sigma[i]);
        }
        objective += lambdas[j] * w2sq / static_cast<double>(m);
      } else {
        const auto sk = sinkhorn(cost, x.weights, marg.weights, opt.sinkhorn_eps);
        double w2sq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          double row = 0.0;
          for (std::size_t k2 = 0; k2 < marg.size(); ++k2) {
            const double p = sk.plan(i, k2);
            row += p;
            w2sq += p * cost(i, k2);
            auto y = marg.point(k2);
            for (std::size_t c = 0; c < d; ++c) proj[j][i * d + c] += p * y[c];
          }
          if (row > 0.0)
            for (std::size_t c = 0; c < d; ++c) proj[j][i * d + c] /= row;
        }
        objective += lambdas[j] * w2sq;
      }
    }
    res.objective.push_back(objective);

    double movement = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      auto dst = x_new.point(i);
      for (std::size_t c = 0; c < d; ++c) {
        double v = 0.0;
        for (std::size_t j = 0; j < marginals.size(); ++j)
          v += lambdas[j] * proj[j][i * d + c];
        dst[c] = v;
      }
      movement += std::sqrt(sq_dist(dst, x.point(i)));
    }
    movement /= static_cast<double>(m);
    std::swap(x.pts, x_new.pts);
    res.iterations = it + 1;
    res.final_movement = movement;
    if (movement < opt.tol) break;
  }

  res.support = std::move(x);
  res.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return res;
}

void write_plan_csv(const Matrix& plan, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  for (std::size_t i = 0; i < plan.rows; ++i) {
    for (std::size_t j = 0; j < plan.cols; ++j)
      f << (j ? "," : "") << format_double(plan(i, j));
    f << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

Matrix plan_from_permutation(const std::vector<std::size_t>& sigma) {
  const std::size_t n = sigma.size();
  Matrix plan(n, n);
  const double w = n ? 1.0 / static_cast<double>(n) : 0.0;
  for (std::size_t i = 0; i < n; ++i) plan(i, sigma[i]) = w;
  return plan;
}

void write_barycenter_report(const BarycenterResult& r, const std::string& path) {
  nlohmann::json j;
  j["iterations"] = r.iterations;
  j["final_movement"] = r.final_movement;
  j["wall_time_ms"] = r.wall_ms;
  j["objective"] = r.objective;
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
}

}  // namespace pifm
