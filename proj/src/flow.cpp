#include "pifm/flow.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace pifm {

void PathSpec::validate(std::size_t n, bool require_origin_start) const {
  if (waypoints.empty()) throw ParamError("PathSpec: needs at least one waypoint");
  if (steps_per_segment == 0 && segments() > 0)
    throw ParamError("PathSpec: steps-per-segment must be positive");
  for (const auto& w : waypoints)
    if (w.size() != n) throw ParamError("PathSpec: waypoint dimension mismatch");
  if (require_origin_start)
    for (double v : waypoints.front())
      if (v != 0.0) throw ParamError("PathSpec: first waypoint must be the origin");
  for (std::size_t k = 1; k < waypoints.size(); ++k)
    if (waypoints[k] == waypoints[k - 1])
      throw ParamError("PathSpec: consecutive waypoints must be distinct");
}

Strategy Strategy::axis(std::vector<std::size_t> order, Vec terminal) {
  Strategy s;
  s.kind = Kind::axis_order;
  s.order = std::move(order);
  s.terminal = std::move(terminal);
  return s;
}

Strategy Strategy::diagonal(Vec terminal) {
  Strategy s;
  s.kind = Kind::diagonal;
  s.terminal = std::move(terminal);
  return s;
}

Strategy Strategy::custom_path(PathSpec path) {
  Strategy s;
  s.kind = Kind::custom;
  s.custom = std::move(path);
  return s;
}

std::string Strategy::name() const {
  switch (kind) {
    case Kind::diagonal: return "diagonal";
    case Kind::custom: return "custom";
    case Kind::axis_order: {
      std::ostringstream os;
      os << "order:";
      for (std::size_t k = 0; k < order.size(); ++k)
        os << (k ? "," : "") << order[k] + 1;  // 1-based in reports
      return os.str();
    }
  }
  return "?";
}

namespace {

// One explicit integration step for every point of the cloud.
void step_cloud(const VectorField& f, PointCloud& cloud, const Vec& gamma,
                const Vec& dir, double dl, Integrator method,
                const Vec* gamma_mid) {
  const std::size_t d = cloud.dim;
  const std::size_t n = f.n_heads();
  std::vector<Vec> heads;
  Vec vel(d), x_mid(d);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto p = cloud.point(i);
    f.eval(p, gamma, heads);
    std::fill(vel.begin(), vel.end(), 0.0);
    for (std::size_t h = 0; h < n; ++h) {
      const double w = dir[h];
      if (w == 0.0) continue;
      for (std::size_t c = 0; c < d; ++c) vel[c] += w * heads[h][c];
    }
    if (method == Integrator::euler) {
      for (std::size_t c = 0; c < d; ++c) p[c] += dl * vel[c];
    } else {
      for (std::size_t c = 0; c < d; ++c) x_mid[c] = p[c] + 0.5 * dl * vel[c];
      f.eval(x_mid, *gamma_mid, heads);
      std::fill(vel.begin(), vel.end(), 0.0);
      for (std::size_t h = 0; h < n; ++h) {
        const double w = dir[h];
        if (w == 0.0) continue;
        for (std::size_t c = 0; c < d; ++c) vel[c] += w * heads[h][c];
      }
      for (std::size_t c = 0; c < d; ++c) p[c] += dl * vel[c];
    }
  }
}

template <class Snapshot>
PointCloud integrate_impl(const VectorField& f, const PointCloud& cloud,
                          const PathSpec& path, Integrator method,
                          Snapshot&& snapshot) {
  if (f.dim() != cloud.dim) throw ParamError("integrate_path: dimension mismatch");
  const std::size_t n = f.n_heads();
  path.validate(n, /*require_origin_start=*/false);

  PointCloud x = cloud;
  snapshot(path.waypoints.front(), x);
  const std::size_t k_steps = path.steps_per_segment;
  Vec gamma(n), gamma_mid(n), dir(n);
  for (std::size_t seg = 0; seg + 1 < path.waypoints.size(); ++seg) {
    const Vec& w0 = path.waypoints[seg];
    const Vec& w1 = path.waypoints[seg + 1];
    for (std::size_t i = 0; i < n; ++i) dir[i] = w1[i] - w0[i];
    const double dl = 1.0 / static_cast<double>(k_steps);
    for (std::size_t k = 0; k < k_steps; ++k) {
      const double l = static_cast<double>(k) * dl;
      for (std::size_t i = 0; i < n; ++i) {
        gamma[i] = w0[i] + l * dir[i];
        gamma_mid[i] = w0[i] + (l + 0.5 * dl) * dir[i];
      }
      step_cloud(f, x, gamma, dir, dl, method, &gamma_mid);
      for (std::size_t i = 0; i < n; ++i)
        gamma[i] = w0[i] + static_cast<double>(k + 1) * dl * dir[i];
      snapshot(gamma, x);
    }
  }
  return x;
}

}  // namespace

Trajectory integrate_path(const VectorField& f, const PointCloud& cloud,
                          const PathSpec& path, Integrator method) {
  Trajectory t;
  integrate_impl(f, cloud, path, method, [&](const Vec& g, const PointCloud& c) {
    t.params.push_back(g);
    t.clouds.push_back(c);
  });
  return t;
}

PointCloud integrate_endpoint(const VectorField& f, const PointCloud& cloud,
                              const PathSpec& path, Integrator method) {
  return integrate_impl(f, cloud, path, method,
                        [](const Vec&, const PointCloud&) {});
}

PathSpec strategy_to_path(const Strategy& s, std::size_t n,
                          std::size_t total_steps) {
  if (s.kind == Strategy::Kind::custom) {
    s.custom.validate(n);
    return s.custom;
  }
  if (s.terminal.size() != n)
    throw ParamError("strategy_to_path: terminal dimension mismatch");

  PathSpec path;
  Vec cur(n, 0.0);
  path.waypoints.push_back(cur);
  if (s.kind == Strategy::Kind::diagonal) {
    bool nonzero = false;
    for (double v : s.terminal) nonzero |= v != 0.0;
    if (nonzero) path.waypoints.push_back(s.terminal);
    path.steps_per_segment = std::max<std::size_t>(1, total_steps);
    return path;
  }

  // axis order: one coordinate moves per segment
  if (s.order.size() != n)
    throw ParamError("strategy_to_path: order must touch every axis");
  std::vector<char> seen(n, 0);
  for (std::size_t ax : s.order) {
    if (ax >= n || seen[ax])
      throw ParamError("strategy_to_path: order must be a permutation");
    seen[ax] = 1;
  }
  for (std::size_t ax : s.order) {
    if (s.terminal[ax] == 0.0) continue;  // zero-length move
    cur[ax] = s.terminal[ax];
    path.waypoints.push_back(cur);
  }
  const std::size_t segs = std::max<std::size_t>(1, path.segments());
  path.steps_per_segment = std::max<std::size_t>(1, total_steps / segs);
  return path;
}

PointCloud generate(const VectorField& f, const PointCloud& cloud,
                    const Strategy& s, std::size_t steps, Integrator method) {
  return integrate_endpoint(f, cloud, strategy_to_path(s, f.n_heads(), steps),
                            method);
}

std::vector<std::pair<Vec, PointCloud>> generate_grid(
    const VectorField& f, const PointCloud& cloud, const std::vector<Vec>& grid,
    const Strategy& s, std::size_t steps, Integrator method) {
  if (grid.empty()) throw ParamError("generate_grid: empty grid");
  std::vector<std::pair<Vec, PointCloud>> out;
  out.reserve(grid.size());
  for (const auto& tvec : grid) {
    Strategy aimed = s;
    aimed.terminal = tvec;
    out.emplace_back(tvec, generate(f, cloud, aimed, steps, method));
  }
  return out;
}

std::vector<Strategy> enumerate_strategies(std::size_t n, const Vec& terminal) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Strategy> out;
  do {
    out.push_back(Strategy::axis(order, terminal));
  } while (std::next_permutation(order.begin(), order.end()));
  out.push_back(Strategy::diagonal(terminal));
  return out;
}

void write_trajectory(const Trajectory& t, const std::string& dir,
                      const std::string& strategy_name) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["strategy"] = strategy_name;
  manifest["snapshots"] = t.clouds.size();
  manifest["steps"] = t.clouds.empty() ? 0 : t.clouds.size() - 1;
  auto params = nlohmann::json::array();
  auto files = nlohmann::json::array();
  for (std::size_t k = 0; k < t.clouds.size(); ++k) {
    std::ostringstream name;
    name << "snapshot_" << k << ".csv";
    write_cloud_csv(t.clouds[k], dir + "/" + name.str());
    params.push_back(t.params[k]);
    files.push_back(name.str());
  }
  manifest["params"] = params;
  manifest["files"] = files;
  std::ofstream f(dir + "/trajectory.json");
  if (!f) throw IoError("cannot open for write: " + dir + "/trajectory.json");
  f << manifest.dump(2) << "\n";
}

}  // namespace pifm
