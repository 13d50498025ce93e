#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "pifm/geometry.hpp"

using namespace pifm;

TEST_CASE("degenerate gaussian collapses to the mean") {
  RngStream rng(1, "data");
  auto cloud = sample_shape(ShapeSpec::gaussian_iso({0.0, 0.0}, 0.0), 5, rng);
  REQUIRE(cloud.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(cloud.point(i)[0] == 0.0);
    CHECK(cloud.point(i)[1] == 0.0);
  }
}

TEST_CASE("uniform disc moments") {
  RngStream rng(7, "data");
  auto cloud = sample_shape(ShapeSpec::disc({0.0, 0.0}, 1.0), 4096, rng);
  auto m = empirical_moments(cloud);
  CHECK(std::abs(m.mean[0]) < 0.05);
  CHECK(std::abs(m.mean[1]) < 0.05);
  // E||x - c||^2 = r^2/2 for the uniform unit disc
  double second = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    second += cloud.weights[i] * sq_dist(cloud.point(i), Vec{0.0, 0.0});
  CHECK(std::abs(second - 0.5) < 0.05);
}

TEST_CASE("affine-of scales the support bound") {
  RngStream rng(3, "data");
  auto spec = ShapeSpec::affine_of(ShapeSpec::disc({0.0, 0.0}, 1.0),
                                   Matrix::scaled_identity(2, 3.0), {0.0, 0.0});
  auto cloud = sample_shape(spec, 512, rng);
  for (std::size_t i = 0; i < cloud.size(); ++i)
    CHECK(norm2(cloud.point(i)) <= 3.0 + 1e-12);
}

TEST_CASE("sample_shape rejects bad input") {
  RngStream rng(1, "data");
  CHECK_THROWS_AS(sample_shape(ShapeSpec::disc({0.0, 0.0}, 1.0), 0, rng),
                  ParamError);
  Matrix indefinite(2, 2);
  indefinite(0, 0) = 1.0;
  indefinite(0, 1) = indefinite(1, 0) = 2.0;
  indefinite(1, 1) = 1.0;
  CHECK_THROWS_AS(
      sample_shape(ShapeSpec::gaussian({0.0, 0.0}, indefinite), 4, rng),
      ParamError);
  CHECK_THROWS_AS(sample_shape(ShapeSpec::disc({0.0, 0.0}, -1.0), 4, rng),
                  ParamError);
}

TEST_CASE("apply_map examples") {
  PointCloud c(2, 1);
  c.point(0)[0] = 1.0;
  c.point(0)[1] = 2.0;

  auto flipped = apply_map(c, Matrix::scaled_identity(2, -1.0), {0.0, 0.0});
  CHECK(flipped.point(0)[0] == -1.0);
  CHECK(flipped.point(0)[1] == -2.0);

  auto same = apply_map(c, Matrix::identity(2), {0.0, 0.0});
  CHECK(same.point(0)[0] == 1.0);
  CHECK(same.point(0)[1] == 2.0);

  PointCloud e1(2, 1);
  e1.point(0)[0] = 1.0;
  auto expanded = apply_map(e1, Matrix::scaled_identity(2, 3.0), {0.0, 0.0});
  CHECK(expanded.point(0)[0] == 3.0);
  CHECK(expanded.point(0)[1] == 0.0);

  CHECK_THROWS_AS(apply_map(c, Matrix::identity(3), {0.0, 0.0, 0.0}), ParamError);
}

TEST_CASE("apply_map composes") {
  RngStream rng(11, "data");
  auto x = sample_shape(ShapeSpec::square({0.0, 0.0}, 2.0), 64, rng);

  // power-of-two diagonals compose without rounding, so equality is exact
  Matrix a(2, 2), b(2, 2);
  a(0, 0) = 2.0;
  a(1, 1) = -0.5;
  b(0, 0) = -4.0;
  b(1, 1) = 8.0;
  auto lhs = apply_map(apply_map(x, a, {0.0, 0.0}), b, {0.0, 0.0});
  auto rhs = apply_map(x, matmul(b, a), {0.0, 0.0});
  CHECK(lhs.pts == rhs.pts);

  // general matrices compose up to roundoff
  Matrix g1(2, 2), g2(2, 2);
  g1(0, 0) = 0.3;
  g1(0, 1) = -1.7;
  g1(1, 0) = 0.9;
  g1(1, 1) = 2.1;
  g2(0, 0) = -0.6;
  g2(0, 1) = 1.1;
  g2(1, 0) = 0.4;
  g2(1, 1) = -0.2;
  auto l2 = apply_map(apply_map(x, g1, {0.0, 0.0}), g2, {0.0, 0.0});
  auto r2 = apply_map(x, matmul(g2, g1), {0.0, 0.0});
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(sq_dist(l2.point(i), r2.point(i)) < 1e-24);
}

TEST_CASE("empirical moments") {
  PointCloud single(2, 1);
  single.point(0)[0] = 2.0;
  single.point(0)[1] = 3.0;
  auto m1 = empirical_moments(single);
  CHECK(m1.mean == Vec{2.0, 3.0});
  CHECK(m1.cov.a == std::vector<double>{0.0, 0.0, 0.0, 0.0});

  PointCloud two(2, 2);
  two.point(1)[0] = 2.0;
  auto m2 = empirical_moments(two);
  CHECK(m2.mean == Vec{1.0, 0.0});

  RngStream rng(5, "data");
  auto big = sample_shape(ShapeSpec::gaussian_iso({1.0, 2.0}, 0.25), 4096, rng);
  auto m3 = empirical_moments(big);
  CHECK(std::abs(m3.mean[0] - 1.0) < 0.05);
  CHECK(std::abs(m3.mean[1] - 2.0) < 0.05);
}

TEST_CASE("sampling is deterministic per (seed, stream)") {
  auto draw = [](std::uint64_t seed, const char* stream) {
    RngStream rng(seed, stream);
    return sample_shape(ShapeSpec::moons({0.0, 0.0}, 1.0, 0.05), 128, rng);
  };
  CHECK(draw(42, "data").pts == draw(42, "data").pts);
  CHECK(draw(42, "data").pts != draw(43, "data").pts);
  CHECK(draw(42, "data").pts != draw(42, "noise").pts);
}

TEST_CASE("rng streams and forks are reproducible and distinct") {
  RngStream a(7, "data");
  RngStream b(7, "data");
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream base(7, "data");
  auto f1 = base.fork("child");
  base.uniform();  // forking is independent of draws made on the parent
  auto f2 = base.fork("child");
  for (int i = 0; i < 16; ++i) CHECK(f1.next_u64() == f2.next_u64());

  auto g = base.fork("other");
  CHECK(g.next_u64() != base.fork("child").next_u64());
}

TEST_CASE("produced clouds have unit total weight") {
  RngStream rng(9, "data");
  for (const auto& spec :
       {ShapeSpec::disc({1.0, 1.0}, 2.0), ShapeSpec::square({0.0, 0.0}, 1.0),
        ShapeSpec::spiral({0.0, 0.0}, 2.0, 2.0, 0.1),
        ShapeSpec::moons({0.0, 0.0}, 1.0, 0.1)}) {
    auto cloud = sample_shape(spec, 257, rng);
    double sum = 0.0;
    for (double w : cloud.weights) sum += w;
    CHECK(std::abs(sum - 1.0) < 1e-9);
    cloud.validate();
  }
}

TEST_CASE("cloud CSV and txt round trips") {
  RngStream rng(2, "data");
  auto cloud = sample_shape(ShapeSpec::gaussian_iso({0.5, -1.5}, 1.0), 37, rng);
  const auto dir = std::filesystem::temp_directory_path() / "pifm_geom_test";
  std::filesystem::create_directories(dir);

  write_cloud_csv(cloud, (dir / "c.csv").string());
  auto back = read_cloud_csv((dir / "c.csv").string());
  CHECK(back.pts == cloud.pts);

  write_cloud_csv(cloud, (dir / "cw.csv").string(), true);
  auto back_w = read_cloud_csv((dir / "cw.csv").string());
  CHECK(back_w.weights == cloud.weights);

  write_cloud_txt(cloud, (dir / "c.txt").string());
  auto back_t = read_cloud_txt((dir / "c.txt").string());
  CHECK(back_t.pts == cloud.pts);
  CHECK(back_t.dim == cloud.dim);
}
