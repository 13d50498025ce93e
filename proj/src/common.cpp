#include "pifm/common.hpp"

#include <charconv>

namespace pifm {

bool psd_cholesky(const Matrix& s, Matrix& l) {
  if (s.rows != s.cols) return false;
  const std::size_t n = s.rows;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(s(i, i)));
  const double tol = 1e-10 * std::max(scale, 1.0);

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(s(i, j) - s(j, i)) > tol) return false;

  l = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = s(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d < -tol) return false;
    if (d <= tol) {
      // semidefinite direction: the rest of the column must vanish too
      l(j, j) = 0.0;
      for (std::size_t i = j + 1; i < n; ++i) {
        double off = s(i, j);
        for (std::size_t k = 0; k < j; ++k) off -= l(i, k) * l(j, k);
        if (std::abs(off) > tol * 10.0) return false;
        l(i, j) = 0.0;
      }
      continue;
    }
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double off = s(i, j);
      for (std::size_t k = 0; k < j; ++k) off -= l(i, k) * l(j, k);
      l(i, j) = off / l(j, j);
    }
  }
  return true;
}

std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace pifm
