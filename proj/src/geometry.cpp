#include "pifm/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace pifm {

bool PointCloud::uniform_weights(double tol) const {
  if (weights.empty()) return true;
  const double w = 1.0 / static_cast<double>(size());
  for (double wi : weights)
    if (std::abs(wi - w) > tol) return false;
  return true;
}

void PointCloud::validate() const {
  if (dim == 0) throw ParamError("PointCloud: dim must be positive");
  if (pts.size() != size() * dim)
    throw ParamError("PointCloud: storage does not match count*dim");
  double sum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ParamError("PointCloud: negative weight");
    sum += w;
  }
  if (size() > 0 && std::abs(sum - 1.0) > 1e-9)
    throw ParamError("PointCloud: weights must sum to 1");
}

std::size_t ShapeSpec::dim() const {
  switch (kind) {
    case ShapeKind::affine_of: return map_r.empty() ? base->dim() : map_r.size();
    case ShapeKind::gaussian: return center.size();
    default: return center.empty() ? 2 : center.size();
  }
}

void ShapeSpec::validate() const {
  switch (kind) {
    case ShapeKind::disc:
    case ShapeKind::square:
      if (radius <= 0.0) throw ParamError("ShapeSpec: radius/half-width must be > 0");
      break;
    case ShapeKind::gaussian: {
      if (cov.rows != center.size() || cov.cols != center.size())
        throw ParamError("ShapeSpec: covariance shape does not match mean");
      Matrix l;
      if (!psd_cholesky(cov, l))
        throw ParamError("ShapeSpec: covariance is not symmetric PSD");
      break;
    }
    case ShapeKind::spiral:
    case ShapeKind::moons:
      if (center.size() != 2) throw ParamError("ShapeSpec: spiral/moons are 2-D");
      if (radius <= 0.0) throw ParamError("ShapeSpec: scale must be > 0");
      if (noise < 0.0) throw ParamError("ShapeSpec: noise must be >= 0");
      break;
    case ShapeKind::affine_of:
      if (!base) throw ParamError("ShapeSpec: affine_of needs a base shape");
      base->validate();
      if (map_a.rows != map_a.cols || map_a.rows != base->dim() ||
          map_r.size() != base->dim())
        throw ParamError("ShapeSpec: affine map shape mismatch");
      break;
  }
}

ShapeSpec ShapeSpec::disc(Vec center, double r) {
  ShapeSpec s;
  s.kind = ShapeKind::disc;
  s.center = std::move(center);
  s.radius = r;
  return s;
}

ShapeSpec ShapeSpec::square(Vec center, double half_width) {
  ShapeSpec s;
  s.kind = ShapeKind::square;
  s.center = std::move(center);
  s.radius = half_width;
  return s;
}

ShapeSpec ShapeSpec::gaussian(Vec mean, Matrix cov) {
  ShapeSpec s;
  s.kind = ShapeKind::gaussian;
  s.center = std::move(mean);
  s.cov = std::move(cov);
  return s;
}

ShapeSpec ShapeSpec::gaussian_iso(Vec mean, double var) {
  const std::size_t d = mean.size();
  return gaussian(std::move(mean), Matrix::scaled_identity(d, var));
}

ShapeSpec ShapeSpec::spiral(Vec center, double scale, double turns, double noise) {
  ShapeSpec s;
  s.kind = ShapeKind::spiral;
  s.center = std::move(center);
  s.radius = scale;
  s.turns = turns;
  s.noise = noise;
  return s;
}

ShapeSpec ShapeSpec::moons(Vec center, double scale, double noise) {
  ShapeSpec s;
  s.kind = ShapeKind::moons;
  s.center = std::move(center);
  s.radius = scale;
  s.noise = noise;
  return s;
}

ShapeSpec ShapeSpec::affine_of(ShapeSpec base, Matrix a, Vec r) {
  ShapeSpec s;
  s.kind = ShapeKind::affine_of;
  s.base = std::make_shared<ShapeSpec>(std::move(base));
  s.map_a = std::move(a);
  s.map_r = std::move(r);
  return s;
}

namespace {

void sample_into(const ShapeSpec& spec, PointCloud& cloud, RngStream& rng) {
  const std::size_t n = cloud.size();
  const std::size_t d = cloud.dim;
  switch (spec.kind) {
    case ShapeKind::disc: {
      // uniform on the d-ball: direction from normals, radius ~ u^(1/d)
      for (std::size_t i = 0; i < n; ++i) {
        auto p = cloud.point(i);
        double nrm2 = 0.0;
        do {
          nrm2 = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            p[k] = rng.normal();
            nrm2 += p[k] * p[k];
          }
        } while (nrm2 == 0.0);
        const double r =
            spec.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
        const double f = r / std::sqrt(nrm2);
        for (std::size_t k = 0; k < d; ++k) p[k] = spec.center[k] + f * p[k];
      }
      break;
    }
    case ShapeKind::square: {
      for (std::size_t i = 0; i < n; ++i) {
        auto p = cloud.point(i);
        for (std::size_t k = 0; k < d; ++k)
          p[k] = spec.center[k] + spec.radius * (2.0 * rng.uniform() - 1.0);
      }
      break;
    }
    case ShapeKind::gaussian: {
      Matrix l;
      if (!psd_cholesky(spec.cov, l))
        throw ParamError("sample_shape: covariance is not symmetric PSD");
      Vec xi(d);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < d; ++k) xi[k] = rng.normal();
        auto p = cloud.point(i);
        for (std::size_t k = 0; k < d; ++k) {
          double v = spec.center[k];
          for (std::size_t j = 0; j <= k; ++j) v += l(k, j) * xi[j];
          p[k] = v;
        }
      }
      break;
    }
    case ShapeKind::spiral: {
      const double theta_max = 2.0 * std::numbers::pi * spec.turns;
      for (std::size_t i = 0; i < n; ++i) {
        const double theta = theta_max * rng.uniform();
        const double r = spec.radius * theta / theta_max;
        auto p = cloud.point(i);
        p[0] = spec.center[0] + r * std::cos(theta) + spec.noise * rng.normal();
        p[1] = spec.center[1] + r * std::sin(theta) + spec.noise * rng.normal();
      }
      break;
    }
    case ShapeKind::moons: {
      // sklearn-style two moons, scaled and recentered
      const std::size_t n_outer = (n + 1) / 2;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = std::numbers::pi * rng.uniform();
        double x, y;
        if (i < n_outer) {
          x = std::cos(t);
          y = std::sin(t);
        } else {
          x = 1.0 - std::cos(t);
          y = 0.5 - std::sin(t);
        }
        auto p = cloud.point(i);
        p[0] = spec.center[0] + spec.radius * x + spec.noise * rng.normal();
        p[1] = spec.center[1] + spec.radius * y + spec.noise * rng.normal();
      }
      break;
    }
    case ShapeKind::affine_of: {
      sample_into(*spec.base, cloud, rng);
      Vec tmp(d);
      for (std::size_t i = 0; i < n; ++i) {
        auto p = cloud.point(i);
        for (std::size_t r2 = 0; r2 < d; ++r2) tmp[r2] = dot(spec.map_a.row(r2), p);
        for (std::size_t k = 0; k < d; ++k) p[k] = tmp[k] + spec.map_r[k];
      }
      break;
    }
  }
}

}  // namespace

PointCloud sample_shape(const ShapeSpec& spec, std::size_t n, RngStream& rng) {
  if (n == 0) throw ParamError("sample_shape: n must be >= 1");
  spec.validate();
  PointCloud cloud(spec.dim(), n);
  sample_into(spec, cloud, rng);
  return cloud;
}

PointCloud apply_map(const PointCloud& cloud, const Matrix& a, const Vec& r) {
  if (a.rows != cloud.dim || a.cols != cloud.dim || r.size() != cloud.dim)
    throw ParamError("apply_map: dimension mismatch");
  PointCloud out = cloud;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto src = cloud.point(i);
    auto dst = out.point(i);
    for (std::size_t k = 0; k < cloud.dim; ++k)
      dst[k] = dot(a.row(k), src) + r[k];
  }
  return out;
}

Moments empirical_moments(const PointCloud& cloud) {
  if (cloud.size() == 0) throw ParamError("empirical_moments: empty cloud");
  const std::size_t d = cloud.dim;
  Moments m;
  m.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto p = cloud.point(i);
    for (std::size_t k = 0; k < d; ++k) m.mean[k] += cloud.weights[i] * p[k];
  }
  m.cov = Matrix(d, d);
  Vec c(d);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto p = cloud.point(i);
    for (std::size_t k = 0; k < d; ++k) c[k] = p[k] - m.mean[k];
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < d; ++j)
        m.cov(k, j) += cloud.weights[i] * c[k] * c[j];
  }
  return m;
}

void write_cloud_csv(const PointCloud& cloud, const std::string& path,
                     bool with_weights) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  for (std::size_t k = 0; k < cloud.dim; ++k)
    f << (k ? "," : "") << "x" << (k + 1);
  if (with_weights) f << ",w";
  f << "\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto p = cloud.point(i);
    for (std::size_t k = 0; k < cloud.dim; ++k)
      f << (k ? "," : "") << format_double(p[k]);
    if (with_weights) f << "," << format_double(cloud.weights[i]);
    f << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  return out;
}

}  // namespace

PointCloud read_cloud_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("empty CSV: " + path);
  auto header = split_csv_line(line);
  bool with_weights = !header.empty() && header.back() == "w";
  const std::size_t d = header.size() - (with_weights ? 1 : 0);
  if (d == 0) throw IoError("bad CSV header: " + path);

  std::vector<double> pts;
  std::vector<double> ws;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw IoError("CSV row width mismatch: " + path);
    for (std::size_t k = 0; k < d; ++k) pts.push_back(std::stod(cells[k]));
    if (with_weights) ws.push_back(std::stod(cells[d]));
  }
  PointCloud cloud(d, pts.size() / d);
  cloud.pts = std::move(pts);
  if (with_weights) cloud.weights = std::move(ws);
  cloud.validate();
  return cloud;
}

void write_cloud_txt(const PointCloud& cloud, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  const bool uniform = cloud.uniform_weights();
  f << "pointcloud v1\n";
  f << "dim " << cloud.dim << "\n";
  f << "count " << cloud.size() << "\n";
  f << "weights " << (uniform ? "uniform" : "explicit") << "\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    auto p = cloud.point(i);
    for (std::size_t k = 0; k < cloud.dim; ++k)
      f << (k ? " " : "") << format_double(p[k]);
    if (!uniform) f << " " << format_double(cloud.weights[i]);
    f << "\n";
  }
  if (!f) throw IoError("write failed: " + path);
}

PointCloud read_cloud_txt(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic, version;
  f >> magic >> version;
  if (magic != "pointcloud" || version != "v1")
    throw IoError("not a pointcloud v1 file: " + path);
  std::string key;
  std::size_t d = 0, count = 0;
  std::string weights_mode;
  f >> key >> d;
  if (key != "dim") throw IoError("expected dim: " + path);
  f >> key >> count;
  if (key != "count") throw IoError("expected count: " + path);
  f >> key >> weights_mode;
  if (key != "weights") throw IoError("expected weights: " + path);
  const bool uniform = weights_mode == "uniform";

  PointCloud cloud(d, count);
  for (std::size_t i = 0; i < count; ++i) {
    auto p = cloud.point(i);
    for (std::size_t k = 0; k < d; ++k)
      if (!(f >> p[k])) throw IoError("truncated pointcloud file: " + path);
    if (!uniform)
      if (!(f >> cloud.weights[i])) throw IoError("truncated weights: " + path);
  }
  cloud.validate();
  return cloud;
}

}  // namespace pifm
