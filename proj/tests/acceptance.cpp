// Acceptance suite: exercises every scenario end to end and prints one
// PASS/FAIL line per criterion. Trained models are cached under the work
// directory, so criteria that share a model do not retrain it.
//
//   acceptance [--work <dir>] [--criterion <k>]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "pifm/scenarios.hpp"

using namespace pifm;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int id;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double s() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

PointCloud cloud_of(std::vector<Vec> pts) {
  PointCloud c(pts[0].size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i)
    std::copy(pts[i].begin(), pts[i].end(), c.point(i).begin());
  return c;
}

// ---- criterion 1: unit/property battery, no training ----------------------

bool brute_force_matches(RngStream& rng, std::string& why) {
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + rng.index(7);
    Matrix c(n, n);
    for (auto& v : c.a)
      v = static_cast<double>(rng.index(trial % 3 == 0 ? 5 : 50));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    double best = 1e300;
    do {
      double cost = 0.0;
      for (std::size_t i = 0; i < n; ++i) cost += c(i, perm[i]);
      best = std::min(best, cost);
    } while (std::next_permutation(perm.begin(), perm.end()));
    auto got = solve_assignment(c);
    double got_cost = 0.0;
    for (std::size_t i = 0; i < n; ++i) got_cost += c(i, got[i]);
    if (std::abs(got_cost - best) > 1e-9) {
      why = "assignment trial " + std::to_string(trial) + ": got " +
            std::to_string(got_cost) + " vs brute force " + std::to_string(best);
      return false;
    }
  }
  return true;
}

bool grads_match_fd(std::string& why) {
  RngStream prng(31, "params");
  MlpConfig cfg;
  cfg.dim = 2;
  cfg.n_heads = 2;
  cfg.width = 12;
  cfg.depth = 2;
  auto p = init_params(cfg, prng);

  RngStream dr(32, "data");
  TrainBatch batch;
  for (int i = 0; i < 2; ++i) {
    CoupledTuple z;
    z.a = {dr.normal(), dr.normal()};
    z.b = {{dr.normal(), dr.normal()}, {dr.normal(), dr.normal()}};
    batch.tvecs.push_back({dr.uniform(), dr.uniform()});
    batch.xs.push_back(cond_mu(z, batch.tvecs.back()));
    batch.tuples.push_back(std::move(z));
  }

  for (double lambda : {0.0, 1.0}) {
    ModelParams grad = zeros_like(p);
    fm_loss(p, batch, &grad);
    if (lambda > 0.0) pi_loss(p, batch, &grad, lambda);
    double max_abs = 1e-12;
    for (std::size_t i = 0; i < param_count(p); ++i)
      max_abs = std::max(max_abs, std::abs(*param_at(grad, i)));
    ModelParams probe = p;
    const double h = 1e-5;
    for (std::size_t i = 0; i < param_count(p); ++i) {
      double* v = param_at(probe, i);
      const double keep = *v;
      auto eval = [&] {
        const double fm = fm_loss(probe, batch, nullptr);
        return lambda > 0.0 ? fm + lambda * pi_loss(probe, batch, nullptr) : fm;
      };
      *v = keep + h;
      const double up = eval();
      *v = keep - h;
      const double dn = eval();
      *v = keep;
      const double fd = (up - dn) / (2.0 * h);
      if (std::abs(fd - *param_at(grad, i)) > 1e-4 * std::max(max_abs, 1.0)) {
        why = "loss gradient (lambda=" + std::to_string(lambda) + ") param " +
              std::to_string(i) + " fd " + std::to_string(fd) + " vs " +
              std::to_string(*param_at(grad, i));
        return false;
      }
    }
  }

  // jvp vs central differences
  RngStream xr(33, "inputs");
  for (int trial = 0; trial < 100; ++trial) {
    Vec x = {xr.normal(), xr.normal()}, tv = {xr.uniform(), xr.uniform()};
    Vec dx = {xr.normal(), xr.normal()}, dt = {xr.normal(), xr.normal()};
    auto got = jvp(p, x, tv, dx, dt);
    const double h = 1e-4;
    Vec xp = x, xm = x, tp = tv, tm = tv;
    for (std::size_t i = 0; i < 2; ++i) {
      xp[i] += h * dx[i];
      xm[i] -= h * dx[i];
      tp[i] += h * dt[i];
      tm[i] -= h * dt[i];
    }
    auto fp = forward(p, xp, tp);
    auto fm2 = forward(p, xm, tm);
    for (std::size_t k = 0; k < 2; ++k)
      for (std::size_t c2 = 0; c2 < 2; ++c2) {
        const double fd = (fp.heads[k][c2] - fm2.heads[k][c2]) / (2.0 * h);
        double scale = std::max(1.0, std::abs(got.heads[k][c2]));
        if (std::abs(fd - got.heads[k][c2]) > 1e-4 * scale) {
          why = "jvp trial " + std::to_string(trial);
          return false;
        }
      }
  }
  return true;
}

Result criterion1() {
  Result r{1, "unit-property suite", false, "", 0.0};
  Timer t;
  std::string why;
  RngStream rng(2024, "acceptance-assignment");

  if (!brute_force_matches(rng, why)) {
    r.detail = why;
    return r;
  }
  if (!grads_match_fd(why)) {
    r.detail = why;
    return r;
  }

  // lie residual of constant fields is exactly zero
  AnalyticField consts(2, {AnalyticHead::constant({1.0, -2.0}),
                           AnalyticHead::constant({0.5, 3.0})});
  auto res = lie_residual(consts, 0, 1, Vec{0.2, 0.4}, Vec{0.7, 0.1});
  if (res != Vec{0.0, 0.0}) {
    r.detail = "lie residual of constants is not zero";
    return r;
  }

  // Euler exact on constant fields
  AnalyticField cf(2, {AnalyticHead::constant({0.3, -0.7})});
  auto cloud = cloud_of({{1.0, 1.0}, {-2.0, 0.5}});
  PathSpec path;
  path.waypoints = {{0.0}, {1.0}};
  path.steps_per_segment = 13;
  auto end = integrate_endpoint(cf, cloud, path);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (std::abs(end.point(i)[0] - cloud.point(i)[0] - 0.3) > 1e-12 ||
        std::abs(end.point(i)[1] - cloud.point(i)[1] + 0.7) > 1e-12) {
      r.detail = "euler not exact on constant field";
      return r;
    }

  // first-order convergence ratios on the linear field
  AnalyticField lf(2, {AnalyticHead::linear(Matrix::identity(2))});
  auto x0 = cloud_of({{1.0, 0.5}});
  auto err = [&](std::size_t k) {
    PathSpec p;
    p.waypoints = {{0.0}, {1.0}};
    p.steps_per_segment = k;
    auto e = integrate_endpoint(lf, x0, p);
    return std::hypot(e.point(0)[0] - std::numbers::e,
                      e.point(0)[1] - 0.5 * std::numbers::e);
  };
  double prev = err(16);
  std::ostringstream ratios;
  for (std::size_t k : {32u, 64u, 128u}) {
    const double cur = err(k);
    const double ratio = prev / cur;
    ratios << " " << ratio;
    if (ratio < 1.7 || ratio > 2.3) {
      r.detail = "convergence ratio out of [1.7,2.3]:" + ratios.str();
      return r;
    }
    prev = cur;
  }

  r.pass = true;
  std::ostringstream d;
  d << "assignment==bruteforce(500), grads/jvp<=1e-4, lie(const)=0, euler "
       "exact, ratios" << ratios.str();
  r.detail = d.str();
  r.seconds = t.s();
  return r;
}

// ---- criterion 7: free-support oracle self-tests ---------------------------

Result criterion7() {
  Result r{7, "free-support oracle self-tests", false, "", 0.0};
  Timer t;
  RngStream rng(77, "acceptance-barycenter");

  auto m = sample_shape(ShapeSpec::disc({1.0, 2.0}, 1.0), 128, rng);
  BarycenterOptions opt;
  auto one = free_support_barycenter({m}, {1.0}, opt);
  if (w2_exact(one.support, m) > opt.tol * 10.0) {
    r.detail = "single-marginal fixed point drifted";
    return r;
  }

  auto d0 = cloud_of({{0.0, 0.0}});
  auto d1 = cloud_of({{2.0, 0.0}});
  auto mid = free_support_barycenter({d0, d1}, {0.5, 0.5});
  if (std::abs(mid.support.point(0)[0] - 1.0) > 1e-9 ||
      std::abs(mid.support.point(0)[1]) > 1e-9) {
    r.detail = "two point-mass midpoint wrong";
    return r;
  }

  const double tt = 0.35, ss = 0.4;
  std::vector<PointCloud> margs = {
      sample_shape(ShapeSpec::gaussian_iso({0.0, 0.0}, 0.25), 256, rng),
      sample_shape(ShapeSpec::gaussian_iso({4.0, 0.0}, 0.25), 256, rng),
      sample_shape(ShapeSpec::gaussian_iso({0.0, 4.0}, 0.25), 256, rng)};
  auto tri = free_support_barycenter(margs, {1.0 - tt - ss, tt, ss});
  auto mo = empirical_moments(tri.support);
  if (std::abs(mo.mean[0] - 4.0 * tt) > 0.1 ||
      std::abs(mo.mean[1] - 4.0 * ss) > 0.1) {
    r.detail = "gaussian barycenter mean off the analytic formula";
    return r;
  }
  for (std::size_t k = 1; k < tri.objective.size(); ++k)
    if (tri.objective[k] > tri.objective[k - 1] + 1e-9) {
      r.detail = "objective increased at iteration " + std::to_string(k);
      return r;
    }

  r.pass = true;
  std::ostringstream d;
  d << "fixed point ok, midpoint exact, mean err ("
    << std::abs(mo.mean[0] - 4.0 * tt) << "," << std::abs(mo.mean[1] - 4.0 * ss)
    << "), objective monotone (" << tri.iterations << " iters)";
  r.detail = d.str();
  r.seconds = t.s();
  return r;
}

// ---- scenario-backed criteria ----------------------------------------------

bool all_grid_points_pass(const json& grid, bool interior_only,
                          std::string& why) {
  for (const auto& p : grid) {
    if (p["oracle"] == "none") continue;
    if (interior_only && !p["interior"].get<bool>()) continue;
    if (!p.contains("pass")) continue;
    if (!p["pass"].get<bool>()) {
      why += " (t=" + p["tvec"][0].dump() + ",s=" + p["tvec"][1].dump() +
             " w2=" + p["w2"].dump() + " bound=" + p["bound"].dump() + ")";
      return false;
    }
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  std::string work = "acceptance_work";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--work") && i + 1 < argc) work = argv[++i];
    if (!std::strcmp(argv[i], "--criterion") && i + 1 < argc)
      only = std::atoi(argv[++i]);
  }
  fs::create_directories(work);
  const std::string cache = work + "/cache";
  const std::uint64_t seed = 1;

  std::vector<Result> results;
  auto want = [&](int id) { return only == 0 || only == id; };

  // fast, training-free criteria first
  if (want(1)) results.push_back(criterion1());
  if (want(7)) results.push_back(criterion7());

  // scenario pipelines (cached models shared across criteria)
  json gaussian, fig1, curly, domain;
  auto run_scenario = [&](const char* name, const std::string& out) {
    std::cerr << "[acceptance] running scenario " << name << "...\n";
    return scenarios::run(name, seed, Config{}, work + "/" + out, cache);
  };

  try {
    if (want(2) || want(3)) gaussian = run_scenario("gaussian-oracle", "gaussian");
    if (want(3) || want(4) || want(9))
      fig1 = run_scenario("fig1-multimarginal", "fig1");
    if (want(5)) curly = run_scenario("curly", "curly");
    if (want(6)) domain = run_scenario("domain-shift", "domain_shift");
  } catch (const std::exception& e) {
    std::cerr << "[acceptance] scenario pipeline failed: " << e.what() << "\n";
  }

  if (want(2)) {
    Result r{2, "gaussian-oracle barycenter agreement", false, "", 0.0};
    if (gaussian.is_null()) {
      r.detail = "scenario did not run";
    } else {
      std::string why;
      const bool ok = all_grid_points_pass(gaussian["barycenter_grid"], false, why);
      r.pass = ok;
      std::size_t n_pts = gaussian["barycenter_grid"].size();
      r.detail = ok ? "all " + std::to_string(n_pts) +
                          " grid points within max(3*floor, 0.12*|m1-m0|*max(1,|t|_1))"
                    : "failed points:" + why;
    }
    results.push_back(r);
  }

  if (want(3)) {
    Result r{3, "commutativity at (1,1)", false, "", 0.0};
    if (gaussian.is_null() || fig1.is_null()) {
      r.detail = "scenario did not run";
    } else {
      const auto& g = gaussian["commutativity"];
      const auto& f = fig1["commutativity"];
      const bool g_ok = g["pifm"]["pass"].get<bool>();
      const bool f_ok = f["pifm"]["pass"].get<bool>();
      const bool g_cfm = g["pifm_not_worse_than_cfm"].get<bool>();
      const bool f_cfm = f["pifm_not_worse_than_cfm"].get<bool>();
      r.pass = g_ok && f_ok && g_cfm && f_cfm;
      std::ostringstream d;
      d << "gaussian gap " << g["pifm"]["max_gap"].get<double>() << " (bound "
        << g["pifm"]["bound"].get<double>() << ", cfm "
        << g["cfm_composition"]["max_gap"].get<double>() << "); fig1 gap "
        << f["pifm"]["max_gap"].get<double>() << " (bound "
        << f["pifm"]["bound"].get<double>() << ", cfm "
        << f["cfm_composition"]["max_gap"].get<double>() << ")";
      r.detail = d.str();
    }
    results.push_back(r);
  }

  if (want(4)) {
    Result r{4, "barycenter agreement (fig1 interior grid)", false, "", 0.0};
    if (fig1.is_null()) {
      r.detail = "scenario did not run";
    } else {
      std::string why;
      const bool ok = all_grid_points_pass(fig1["barycenter_grid"], true, why);
      std::size_t exterior = 0;
      for (const auto& p : fig1["barycenter_grid"])
        if (!p["interior"].get<bool>()) ++exterior;
      r.pass = ok && exterior >= 2;  // exterior points reported, not asserted
      r.detail = ok ? "interior points within max(3*floor, 0.15*scale); " +
                          std::to_string(exterior) + " exterior points reported"
                    : "failed points:" + why;
    }
    results.push_back(r);
  }

  if (want(5)) {
    Result r{5, "curly: regularization orders W2 and gaps", false, "", 0.0};
    if (curly.is_null()) {
      r.detail = "scenario did not run";
    } else {
      const bool w2_ok = curly["comparison"]["target_w2_ordered"].get<bool>();
      const bool gap_ok = curly["comparison"]["gap_ordered"].get<bool>();
      r.pass = w2_ok && gap_ok;
      std::ostringstream d;
      d << "target W2 max: lambda1 " << curly["lambda1"]["max_target_w2"].get<double>()
        << (w2_ok ? " < " : " !< ") << curly["lambda0"]["max_target_w2"].get<double>()
        << " lambda0; gaps: lambda1 " << curly["lambda1"]["max_gap"].get<double>()
        << (gap_ok ? " < " : " !< ") << curly["lambda0"]["max_gap"].get<double>()
        << " lambda0";
      r.detail = d.str();
    }
    results.push_back(r);
  }

  if (want(6)) {
    Result r{6, "domain-shift unseen middle source", false, "", 0.0};
    if (domain.is_null()) {
      r.detail = "scenario did not run";
    } else {
      const double mean = domain["w2_mean"].get<double>();
      const double sd = domain["w2_std"].get<double>();
      r.pass = mean <= 0.5;
      std::ostringstream d;
      d << "W2 over " << domain["per_seed"].size() << " seeds: " << mean
        << " +/- " << sd << " (threshold 0.5, floor "
        << domain["sampling_floor"].get<double>() << ")";
      r.detail = d.str();
    }
    results.push_back(r);
  }

  if (want(8)) {
    Result r{8, "reproducibility: byte-identical metrics", false, "", 0.0};
    Timer t;
    try {
      auto overrides = [] {
        Config c;
        c.set("train.steps", "300");
        c.set("eval.points", "256");
        c.set("eval.oracle_points", "128");
        return c;
      };
      // fresh runs, no cache: full determinism including training
      fs::remove_all(work + "/repro_a");
      fs::remove_all(work + "/repro_b");
      auto a = scenarios::run("gaussian-oracle", 5, overrides(),
                              work + "/repro_a", "");
      auto b = scenarios::run("gaussian-oracle", 5, overrides(),
                              work + "/repro_b", "");
      const std::string ca = canonical_metrics(a);
      const std::string cb = canonical_metrics(b);
      const std::string fa =
          canonical_metrics(read_json(work + "/repro_a/metrics.json"));
      const std::string fb =
          canonical_metrics(read_json(work + "/repro_b/metrics.json"));
      r.pass = ca == cb && fa == fb;
      r.detail = r.pass ? "two fresh runs agree byte-for-byte after stripping "
                          "wall-time fields (" +
                              std::to_string(ca.size()) + " bytes)"
                        : "metric documents differ";
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = t.s();
    results.push_back(r);
  }

  if (want(9)) {
    Result r{9, "timing report fields", false, "", 0.0};
    if (fig1.is_null()) {
      r.detail = "scenario did not run";
    } else {
      bool ok = true;
      std::size_t counted = 0;
      for (const auto& p : fig1["barycenter_grid"]) {
        if (!p.contains("wall_model_ms") || !p.contains("wall_oracle_ms")) {
          ok = false;
          break;
        }
        if (p["wall_model_ms"].get<double>() <= 0.0) ok = false;
        if (p["oracle"] == "free-support" &&
            p["wall_oracle_ms"].get<double>() <= 0.0)
          ok = false;
        ++counted;
      }
      r.pass = ok && counted > 0;
      r.detail = "model-inference and free-support wall times present and "
                 "positive for " +
                 std::to_string(counted) + " grid points";
    }
    results.push_back(r);
  }

  std::sort(results.begin(), results.end(),
            [](const Result& a, const Result& b) { return a.id < b.id; });
  bool all = true;
  for (const auto& r : results) {
    all &= r.pass;
    std::ostringstream line;
    line << (r.pass ? "[PASS]" : "[FAIL]") << " C" << r.id << " " << r.name
         << ": " << r.detail;
    if (r.seconds > 0.0) line << " [" << r.seconds << "s]";
    std::cout << line.str() << "\n";
  }
  std::cout << (all ? "ACCEPTANCE: all criteria passed"
                    : "ACCEPTANCE: FAILURES present")
            << "\n";
  return all ? 0 : 1;
}
