#pragma once

#include <memory>
#include <string>

#include "pifm/common.hpp"
#include "pifm/rng.hpp"

namespace pifm {

/// Weighted empirical distribution: `count` points of dimension `dim`,
/// stored row-major. Weights are nonnegative and sum to 1; uniform unless
/// a transport plan says otherwise.
struct PointCloud {
  std::size_t dim = 0;
  std::vector<double> pts;      // count * dim, row-major
  std::vector<double> weights;  // count entries

  PointCloud() = default;
  PointCloud(std::size_t d, std::size_t count)
      : dim(d), pts(count * d, 0.0),
        weights(count, count ? 1.0 / static_cast<double>(count) : 0.0) {}

  std::size_t size() const { return weights.size(); }
  std::span<double> point(std::size_t i) { return {pts.data() + i * dim, dim}; }
  std::span<const double> point(std::size_t i) const {
    return {pts.data() + i * dim, dim};
  }

  bool uniform_weights(double tol = 1e-12) const;
  void validate() const;  // dimension and weight invariants
};

enum class ShapeKind { disc, square, gaussian, spiral, moons, affine_of };

/// Toy sampleable distribution. Disc and square are uniform, gaussian takes
/// a full covariance, spiral/moons follow the usual toy-dataset
/// parameterizations with additive Gaussian noise, affine_of pushes a base
/// shape through x -> A x + r.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::disc;
  Vec center;      // disc/square/spiral/moons center, gaussian mean
  double radius = 1.0;       // disc radius / square half-width / spiral+moons scale
  Matrix cov;                // gaussian
  double turns = 2.0;        // spiral
  double noise = 0.0;        // spiral/moons sigma
  // affine_of payload
  std::shared_ptr<const ShapeSpec> base;
  Matrix map_a;
  Vec map_r;

  std::size_t dim() const;
  void validate() const;

  static ShapeSpec disc(Vec center, double r);
  static ShapeSpec square(Vec center, double half_width);
  static ShapeSpec gaussian(Vec mean, Matrix cov);
  static ShapeSpec gaussian_iso(Vec mean, double var);
  static ShapeSpec spiral(Vec center, double scale, double turns, double noise);
  static ShapeSpec moons(Vec center, double scale, double noise);
  static ShapeSpec affine_of(ShapeSpec base, Matrix a, Vec r);
};

/// n i.i.d. draws from the shape, uniform weights.
PointCloud sample_shape(const ShapeSpec& spec, std::size_t n, RngStream& rng);

/// Pointwise x -> A x + r, weights preserved.
PointCloud apply_map(const PointCloud& cloud, const Matrix& a, const Vec& r);

struct Moments {
  Vec mean;
  Matrix cov;
};

/// Weighted mean and covariance.
Moments empirical_moments(const PointCloud& cloud);

/// CSV: header x1..xd[,w], one row per point.
void write_cloud_csv(const PointCloud& cloud, const std::string& path,
                     bool with_weights = false);
PointCloud read_cloud_csv(const std::string& path);

/// Structured text format with dim/count metadata:
///   pointcloud v1
///   dim <d>
///   count <n>
///   weights uniform|explicit
///   <rows: d values [+ weight]>
void write_cloud_txt(const PointCloud& cloud, const std::string& path);
PointCloud read_cloud_txt(const std::string& path);

}  // namespace pifm
