#pragma once

#include "pifm/field_model.hpp"
#include "pifm/geometry.hpp"

namespace pifm {

/// Piecewise-linear trajectory in parameter space. Strategy-generated paths
/// always start at the origin; scenario code may integrate from another
/// start point (a cloud already living at that parameter value) by building
/// the path explicitly.
struct PathSpec {
  std::vector<Vec> waypoints;
  std::size_t steps_per_segment = 50;

  std::size_t segments() const {
    return waypoints.size() < 2 ? 0 : waypoints.size() - 1;
  }
  std::size_t total_steps() const { return segments() * steps_per_segment; }
  void validate(std::size_t n, bool require_origin_start = true) const;
};

struct Strategy {
  enum class Kind { axis_order, diagonal, custom } kind = Kind::diagonal;
  std::vector<std::size_t> order;  // axis visit order (0-based)
  Vec terminal;
  PathSpec custom;

  static Strategy axis(std::vector<std::size_t> order, Vec terminal);
  static Strategy diagonal(Vec terminal);
  static Strategy custom_path(PathSpec path);
  std::string name() const;
};

struct Trajectory {
  std::vector<Vec> params;         // snapshot parameter points
  std::vector<PointCloud> clouds;  // snapshot count = total steps + 1
};

enum class Integrator { euler, midpoint };

/// Explicit Euler (or midpoint) along each linear segment:
/// x += dl * sum_i (dgamma_i/dl) u_i(x, gamma(l)).
Trajectory integrate_path(const VectorField& f, const PointCloud& cloud,
                          const PathSpec& path,
                          Integrator method = Integrator::euler);

/// Endpoint only; identical math without snapshot storage.
PointCloud integrate_endpoint(const VectorField& f, const PointCloud& cloud,
                              const PathSpec& path,
                              Integrator method = Integrator::euler);

/// Expands a strategy into waypoints; the step budget splits evenly across
/// segments (zero-length axis moves are skipped).
PathSpec strategy_to_path(const Strategy& s, std::size_t n,
                          std::size_t total_steps);

PointCloud generate(const VectorField& f, const PointCloud& cloud,
                    const Strategy& s, std::size_t steps,
                    Integrator method = Integrator::euler);

/// One endpoint per grid parameter point, same strategy kind re-aimed at
/// each point. Grid entries may lie outside [0,1]^n.
std::vector<std::pair<Vec, PointCloud>> generate_grid(
    const VectorField& f, const PointCloud& cloud, const std::vector<Vec>& grid,
    const Strategy& s, std::size_t steps,
    Integrator method = Integrator::euler);

/// All n! axis orders (n <= 4 guarded by the caller) plus the diagonal.
std::vector<Strategy> enumerate_strategies(std::size_t n, const Vec& terminal);

/// Trajectory export: per-snapshot CSVs plus a JSON manifest.
void write_trajectory(const Trajectory& t, const std::string& dir,
                      const std::string& strategy_name);

}  // namespace pifm
