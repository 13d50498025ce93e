#include "pifm/scenarios.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace pifm::scenarios {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c",
                                    "#d62728", "#9467bd", "#8c564b"};

struct Ctx {
  std::string out;
  std::string cache;
  std::vector<std::string> files;
  json phases = json::object();

  std::string file(const std::string& rel) {
    files.push_back(rel);
    return out + "/" + rel;
  }
};

double ms_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

TrainConfig apply_train_overrides(const Config& c, TrainConfig cfg) {
  cfg.n = c.get_size("train.n", cfg.n);
  cfg.batch = c.get_size("train.batch", cfg.batch);
  cfg.steps = c.get_size("train.steps", cfg.steps);
  cfg.lr = c.get_double("train.lr", cfg.lr);
  cfg.sigma = c.get_double("train.sigma", cfg.sigma);
  cfg.lambda = c.get_double("train.lambda", cfg.lambda);
  cfg.coupling =
      coupling_from(c.get_string("train.coupling", coupling_name(cfg.coupling)));
  cfg.beta1 = c.get_double("train.beta1", cfg.beta1);
  cfg.beta2 = c.get_double("train.beta2", cfg.beta2);
  cfg.eps = c.get_double("train.eps", cfg.eps);
  cfg.seed = c.get_u64("train.seed", cfg.seed);
  cfg.clip_norm = c.get_double("train.clip", cfg.clip_norm);
  cfg.warmup = c.get_size("train.warmup", cfg.warmup);
  cfg.width = c.get_size("model.width", cfg.width);
  cfg.depth = c.get_size("model.depth", cfg.depth);
  cfg.activation = activation_from(
      c.get_string("model.activation", activation_name(cfg.activation)));
  cfg.fourier = c.get_bool("model.fourier", cfg.fourier);
  cfg.fourier_bands = c.get_size("model.fourier_bands", cfg.fourier_bands);
  return cfg;
}

struct EvalOptions {
  std::size_t points = 512;        // model endpoint cloud size
  std::size_t oracle_points = 256; // free-support marginal/support size
  std::size_t steps = 100;
  double grid_spacing = 0.25;
  std::size_t seeds = 1;  // domain-shift repetitions
  Integrator method = Integrator::euler;
};

EvalOptions apply_eval_overrides(const Config& c, EvalOptions e) {
  e.points = c.get_size("eval.points", e.points);
  e.oracle_points = c.get_size("eval.oracle_points", e.oracle_points);
  e.steps = c.get_size("eval.steps", e.steps);
  e.grid_spacing = c.get_double("eval.grid", e.grid_spacing);
  e.seeds = c.get_size("eval.seeds", e.seeds);
  e.method = c.get_bool("eval.midpoint", false) ? Integrator::midpoint
                                                : Integrator::euler;
  return e;
}

std::string geometry_echo(const std::vector<ShapeSpec>& shapes) {
  std::string s;
  for (const auto& sh : shapes) s += shape_to_string(sh) + ";";
  return s;
}

/// Train, or reuse a cached checkpoint keyed by (config, geometry, tag).
/// Checkpoints are lossless, so a cache hit reproduces fresh training.
ModelParams train_cached(Ctx& ctx, const std::string& tag, const TrainConfig& cfg,
                         const TrainSpec& spec, const std::string& geom_echo) {
  const std::string key = sha256_hex(cfg.echo() + "|" + geom_echo + "|" + tag);
  const std::string out_ckpt = ctx.file("model_" + tag + ".ckpt");
  std::string cached;
  if (!ctx.cache.empty()) {
    fs::create_directories(ctx.cache);
    cached = ctx.cache + "/" + tag + "-" + key.substr(0, 16) + ".ckpt";
    if (fs::exists(cached)) {
      auto ck = load_checkpoint(cached);
      save_checkpoint(ck.params, out_ckpt, ck.config_echo, ck.seed);
      return ck.params;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res = train(cfg, spec);
  ctx.phases["wall_train_" + tag + "_ms"] = ms_since(t0);
  write_loss_csv(res.history, ctx.file("loss_" + tag + ".csv"));
  save_checkpoint(res.params, out_ckpt, cfg.echo() + "|" + geom_echo, cfg.seed);
  if (!cached.empty())
    save_checkpoint(res.params, cached, cfg.echo() + "|" + geom_echo, cfg.seed);
  return res.params;
}

json tvec_json(std::span<const double> tvec) {
  json a = json::array();
  for (double t : tvec) a.push_back(t);
  return a;
}

json compare_points_json(const std::vector<ComparePoint>& pts,
                         const std::function<double(const ComparePoint&)>& bound) {
  json arr = json::array();
  for (const auto& p : pts) {
    json e;
    e["tvec"] = tvec_json(p.tvec);
    e["interior"] = p.interior;
    e["oracle"] = p.oracle;
    if (p.oracle != "none") {
      e["w2"] = p.w2;
      e["sampling_floor"] = p.floor;
      const double b = bound(p);
      if (b > 0.0) {
        e["bound"] = b;
        e["pass"] = p.w2 <= b;
      }
    }
    e["wall_model_ms"] = p.wall_model_ms;
    e["wall_oracle_ms"] = p.wall_oracle_ms;
    arr.push_back(e);
  }
  return arr;
}

void write_compare_csv(const std::string& path,
                       const std::vector<ComparePoint>& pts) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "t,s,interior,oracle,w2,sampling_floor,wall_model_ms,wall_oracle_ms\n";
  for (const auto& p : pts) {
    f << format_double(p.tvec[0]) << "," << format_double(p.tvec[1]) << ","
      << (p.interior ? 1 : 0) << "," << p.oracle << ","
      << (p.oracle != "none" ? format_double(p.w2) : "") << ","
      << (p.oracle != "none" ? format_double(p.floor) : "") << ","
      << format_double(p.wall_model_ms) << "," << format_double(p.wall_oracle_ms)
      << "\n";
  }
}

/// Endpoint-level resampling noise: two independent source draws pushed
/// through the same diagonal strategy.
double endpoint_floor(const VectorField& f, const DataSource& source,
                      const Vec& tvec, std::size_t n_points, std::size_t steps,
                      std::uint64_t seed) {
  return sampling_floor(
      [&](RngStream& r) {
        PointCloud draw = source.sample(n_points, r);
        return generate(f, draw, Strategy::diagonal(tvec), steps);
      },
      seed, "endpoint-floor");
}

json commutativity_json(const CommutativityReport& rep) {
  json out;
  out["tvec"] = tvec_json(rep.tvec);
  out["max_gap"] = rep.max_gap;
  json eps = json::array();
  for (const auto& e : rep.endpoints) {
    json ej;
    ej["strategy"] = e.strategy;
    if (e.to_reference >= 0.0) ej["target_w2"] = e.to_reference;
    eps.push_back(ej);
  }
  out["strategies"] = eps;
  json gaps = json::array();
  for (std::size_t i = 0; i < rep.endpoints.size(); ++i)
    for (std::size_t j = i + 1; j < rep.endpoints.size(); ++j) {
      json g;
      g["a"] = rep.endpoints[i].strategy;
      g["b"] = rep.endpoints[j].strategy;
      g["w2"] = rep.pairwise(i, j);
      gaps.push_back(g);
    }
  out["pairwise"] = gaps;
  return out;
}

void plot_layers(Ctx& ctx, const std::string& rel,
                 const std::vector<std::pair<std::string, const PointCloud*>>& cs,
                 const std::string& title) {
  std::vector<SvgLayer> layers;
  std::size_t ci = 0;
  for (const auto& [label, cloud] : cs) {
    SvgLayer l;
    l.cloud = cloud;
    l.label = label;
    l.color = kPalette[ci++ % 6];
    layers.push_back(l);
  }
  write_scatter_svg(ctx.file(rel), layers, title);
}

// --------------------------------------------------------------------------
// scenario setups: geometry and training data pinned per scenario
// --------------------------------------------------------------------------

struct Setup {
  std::string name;
  TrainSpec spec;
  std::string geom;
  std::optional<GaussianSpec> gauss;  // analytic oracle when Gaussian
};

Setup make_gaussian_setup() {
  Setup s;
  s.name = "gaussian-oracle";
  GaussianSpec g;
  g.means = {{0.0, 0.0}, {4.0, 0.0}, {0.0, 4.0}};
  g.cov = Matrix::scaled_identity(2, 0.25);
  s.gauss = g;
  s.spec.source = DataSource::of(ShapeSpec::gaussian_iso(g.means[0], 0.25));
  s.spec.targets = {DataSource::of(ShapeSpec::gaussian_iso(g.means[1], 0.25)),
                    DataSource::of(ShapeSpec::gaussian_iso(g.means[2], 0.25))};
  s.geom = geometry_echo({*s.spec.source.shape, *s.spec.targets[0].shape,
                          *s.spec.targets[1].shape});
  return s;
}

Setup make_fig1_setup(bool grid_focus) {
  Setup s;
  s.name = grid_focus ? "barycenter-grid" : "fig1-multimarginal";
  s.spec.source = DataSource::of(ShapeSpec::disc({0.0, 0.0}, 1.0));
  s.spec.targets = {DataSource::of(ShapeSpec::square({5.0, 0.0}, 0.5)),
                    DataSource::of(ShapeSpec::disc({0.0, 5.0}, 0.5))};
  s.geom = geometry_echo({*s.spec.source.shape, *s.spec.targets[0].shape,
                          *s.spec.targets[1].shape});
  return s;
}

Setup make_appendix_setup() {
  Setup s;
  s.name = "appendix-shapes";
  s.spec.source = DataSource::of(ShapeSpec::gaussian_iso({0.0, 0.0}, 0.25));
  s.spec.targets = {DataSource::of(ShapeSpec::spiral({4.0, 0.0}, 2.0, 2.0, 0.05)),
                    DataSource::of(ShapeSpec::moons({0.0, 4.0}, 1.5, 0.05))};
  s.geom = geometry_echo({*s.spec.source.shape, *s.spec.targets[0].shape,
                          *s.spec.targets[1].shape});
  return s;
}

Setup make_curly_setup() {
  Setup s;
  s.name = "curly";
  s.spec.source = DataSource::of(ShapeSpec::gaussian_iso({0.0, 0.0}, 1.0));
  s.spec.maps = {AffineMap{Matrix::scaled_identity(2, -1.0), {0.0, 0.0}},
                 AffineMap{Matrix::scaled_identity(2, 3.0), {0.0, 0.0}}};
  s.geom = geometry_echo({*s.spec.source.shape}) + "maps:-I,3I";
  return s;
}

struct DomainShiftSetup {
  TrainSpec spec;
  ShapeSpec unseen, expected;
  double s_mid = 0.5;
  std::string geom;
};

DomainShiftSetup make_domain_shift_setup(const Config& c) {
  DomainShiftSetup s;
  const ShapeSpec source = parse_shape(c.get_string("data.source", "disc(0,0,1)"));
  const ShapeSpec target_t =
      parse_shape(c.get_string("data.target_t", "disc(5,0,0.5)"));
  const ShapeSpec target_s =
      parse_shape(c.get_string("data.target_s", "disc(0,5,1)"));
  s.unseen = parse_shape(c.get_string("data.unseen_source", "disc(0,2.5,1)"));
  s.expected = parse_shape(c.get_string("data.expected_target", "disc(5,2.5,0.5)"));
  s.s_mid = c.get_double("data.unseen_s", 0.5);
  s.spec.source = DataSource::of(source);
  s.spec.targets = {DataSource::of(target_t), DataSource::of(target_s)};
  s.geom = geometry_echo({source, target_t, target_s, s.unseen, s.expected});
  return s;
}

// --------------------------------------------------------------------------
// single-model metric batteries (shared by cmd_scenario and cmd_eval)
// --------------------------------------------------------------------------

/// Barycenter grid + commutativity at (1,1) + (for Gaussians) slice check
/// and the Thm-3.5 transport cost.
json eval_grid_scenario(Ctx& ctx, const VectorField& field, const Setup& setup,
                        const EvalOptions& eopt, std::uint64_t seed) {
  std::vector<Vec> grid = make_simplex_grid(eopt.grid_spacing);
  grid.push_back({1.0, 1.0});
  grid.push_back({1.2, 0.3});

  CompareOptions copt;
  copt.eval_n = setup.gauss ? eopt.points : eopt.oracle_points;
  copt.oracle_n = eopt.oracle_points;
  copt.steps = eopt.steps;
  copt.seed = seed;
  copt.keep_clouds = true;
  auto pts = barycenter_compare(field, setup.spec.source, setup.spec.targets,
                                grid, setup.gauss, copt);

  // source-target scale bounds commutativity gaps; the barycenter grid uses
  // the larger inter-marginal scale (largest pairwise W2)
  RngStream srng(seed, "scale");
  PointCloud m0 = setup.spec.source.sample(eopt.oracle_points, srng);
  PointCloud m1 = setup.spec.targets[0].sample(eopt.oracle_points, srng);
  PointCloud m2 = setup.spec.targets[1].sample(eopt.oracle_points, srng);
  const double src_tgt_scale = std::max(w2_exact(m0, m1), w2_exact(m0, m2));
  const double scale = std::max(src_tgt_scale, w2_exact(m1, m2));

  std::function<double(const ComparePoint&)> bound;
  if (setup.gauss) {
    const double mean_scale =
        norm2(Vec{setup.gauss->means[1][0] - setup.gauss->means[0][0],
                  setup.gauss->means[1][1] - setup.gauss->means[0][1]});
    bound = [mean_scale](const ComparePoint& p) {
      double l1 = 0.0;
      for (double t : p.tvec) l1 += std::abs(t);
      return std::max(3.0 * p.floor, 0.12 * mean_scale * std::max(1.0, l1));
    };
  } else {
    bound = [scale](const ComparePoint& p) {
      return std::max(3.0 * p.floor, 0.15 * scale);
    };
  }

  json metrics;
  metrics["barycenter_grid"] = compare_points_json(pts, bound);
  metrics["inter_marginal_scale"] = scale;
  write_compare_csv(ctx.file("barycenter_grid.csv"), pts);

  fs::create_directories(ctx.out + "/plots");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    std::ostringstream rel, title;
    rel << "plots/grid_" << i << ".svg";
    title << "t=" << p.tvec[0] << " s=" << p.tvec[1] << " [" << p.oracle << "]";
    std::vector<std::pair<std::string, const PointCloud*>> cs = {
        {"source", &m0}, {"target-t", &m1}, {"target-s", &m2},
        {"model", &p.model_endpoint}};
    if (p.oracle != "none") cs.push_back({"oracle", &p.oracle_cloud});
    plot_layers(ctx, rel.str(), cs, title.str());
  }

  // commutativity at the (1,1) corner
  const Vec corner = {1.0, 1.0};
  RngStream erng(seed, "commutativity-eval");
  PointCloud eval_src = setup.spec.source.sample(eopt.points, erng);
  std::optional<PointCloud> corner_ref;
  if (setup.gauss) {
    RngStream orng(seed, "commutativity-oracle");
    corner_ref =
        sample_gaussian_oracle(*setup.gauss, corner, eopt.points, orng);
  }
  auto rep = commutativity_gap(field, eval_src, corner, eopt.steps,
                               corner_ref ? &*corner_ref : nullptr, eopt.method);
  const double floor11 = endpoint_floor(field, setup.spec.source, corner,
                                        eopt.points, eopt.steps, seed);
  json comm = commutativity_json(rep);
  comm["sampling_floor"] = floor11;
  comm["bound"] = std::max(3.0 * floor11, 0.15 * src_tgt_scale);
  comm["pass"] = rep.max_gap <= std::max(3.0 * floor11, 0.15 * src_tgt_scale);
  metrics["commutativity"] = json::object();
  metrics["commutativity"]["pifm"] = comm;
  metrics["source_target_scale"] = src_tgt_scale;

  {
    std::vector<std::pair<std::string, const PointCloud*>> cs = {
        {"source", &eval_src}, {"target-t", &m1}, {"target-s", &m2}};
    for (const auto& e : rep.endpoints) cs.push_back({e.strategy, &e.cloud});
    plot_layers(ctx, "plots/pifm_strategies.svg", cs,
                setup.name + ": strategies at (1,1)");
  }

  if (setup.gauss) {
    // slice identities at the appendix's (t,s) = (0.6, 0.3)
    RngStream slrng(seed, "slice");
    PointCloud rho0 = setup.spec.source.sample(eopt.oracle_points, slrng);
    PointCloud rho1 = setup.spec.targets[0].sample(eopt.oracle_points, slrng);
    PointCloud rho2 = setup.spec.targets[1].sample(eopt.oracle_points, slrng);
    auto slice =
        slice_barycenter_check(field, rho0, rho1, rho2, 0.6, 0.3, eopt.steps);
    auto oracle = gaussian_barycenter_oracle(*setup.gauss, Vec{0.6, 0.3});
    json sj;
    sj["tvec"] = tvec_json(slice.tvec);
    sj["w2_horizontal"] = slice.w2_horizontal;
    sj["w2_vertical"] = slice.w2_vertical;
    sj["horizontal_mean"] = slice.horizontal_mean;
    sj["vertical_mean"] = slice.vertical_mean;
    sj["oracle_mean"] = oracle.first;
    metrics["slice_check"] = sj;

    // Thm-3.5 cost with the translation maps T_i(a) = a + (m_i - m_0)
    RngStream trng(seed, "transport-cost");
    PointCloud a = setup.spec.source.sample(eopt.oracle_points, trng);
    Vec d1 = {setup.gauss->means[1][0] - setup.gauss->means[0][0],
              setup.gauss->means[1][1] - setup.gauss->means[0][1]};
    Vec d2 = {setup.gauss->means[2][0] - setup.gauss->means[0][0],
              setup.gauss->means[2][1] - setup.gauss->means[0][1]};
    PointCloud b = apply_map(a, Matrix::identity(2), d1);
    PointCloud cc = apply_map(a, Matrix::identity(2), d2);
    json costs = json::array();
    for (const auto& tv : grid) {
      json e;
      e["tvec"] = tvec_json(tv);
      e["cost"] = pifm_transport_cost(a, b, cc, tv[0], tv[1]);
      costs.push_back(e);
    }
    metrics["transport_cost"] = costs;
  }

  metrics["gaps"] = comm["pairwise"];
  metrics["target_w2"] =
      rep.endpoints.front().to_reference >= 0.0
          ? json(rep.endpoints.front().to_reference)
          : json();
  metrics["sampling_floor"] = floor11;
  return metrics;
}

/// Per-strategy W2 to the -3 x0 target plus pairwise gaps at (1,1).
json eval_curly_model(const VectorField& field, const Setup& setup,
                      const PointCloud& eval_src, const PointCloud& target,
                      const EvalOptions& eopt, std::uint64_t seed) {
  const Vec corner = {1.0, 1.0};
  auto rep =
      commutativity_gap(field, eval_src, corner, eopt.steps, &target, eopt.method);
  double max_w2 = 0.0;
  for (const auto& e : rep.endpoints) max_w2 = std::max(max_w2, e.to_reference);
  json out = commutativity_json(rep);
  out["max_target_w2"] = max_w2;
  out["sampling_floor"] = endpoint_floor(field, setup.spec.source, corner,
                                         eval_src.size(), eopt.steps, seed);
  return out;
}

/// W2 between the pushed unseen middle source and the expected target.
double eval_domain_shift_model(const VectorField& field,
                               const DomainShiftSetup& setup,
                               const EvalOptions& eopt, std::uint64_t eval_seed,
                               PointCloud* out_unseen, PointCloud* out_endpoint,
                               PointCloud* out_expected) {
  RngStream erng(eval_seed, "domain-shift-eval");
  PointCloud unseen_cloud = sample_shape(setup.unseen, eopt.points, erng);
  PathSpec path;  // the unseen source lives at (0, s_mid)
  path.waypoints = {{0.0, setup.s_mid}, {1.0, setup.s_mid}};
  path.steps_per_segment = eopt.steps;
  PointCloud endpoint = integrate_endpoint(field, unseen_cloud, path, eopt.method);
  PointCloud expected_cloud = sample_shape(setup.expected, eopt.points, erng);
  const double w2 = w2_exact(endpoint, expected_cloud);
  if (out_unseen) *out_unseen = std::move(unseen_cloud);
  if (out_endpoint) *out_endpoint = std::move(endpoint);
  if (out_expected) *out_expected = std::move(expected_cloud);
  return w2;
}

// --------------------------------------------------------------------------
// full pipelines
// --------------------------------------------------------------------------

json run_grid_scenario(Ctx& ctx, const Setup& setup, std::uint64_t seed,
                       const Config& c, const TrainConfig& cfg_defaults,
                       const EvalOptions& eopt_defaults,
                       bool with_cfm_baseline) {
  TrainConfig cfg = apply_train_overrides(c, cfg_defaults);
  EvalOptions eopt = apply_eval_overrides(c, eopt_defaults);

  MlpField field(train_cached(ctx, "pifm", cfg, setup.spec, setup.geom));
  json metrics = eval_grid_scenario(ctx, field, setup, eopt, seed);
  metrics["scenario"] = setup.name;
  metrics["seed"] = seed;

  if (with_cfm_baseline) {
    TrainConfig cfm_cfg = cfg;
    cfm_cfg.n = 1;
    cfm_cfg.lambda = 0.0;
    TrainSpec cfm_a{setup.spec.source, {setup.spec.targets[0]}, {}};
    TrainSpec cfm_b{setup.spec.source, {setup.spec.targets[1]}, {}};
    auto part_a = std::make_shared<MlpField>(
        train_cached(ctx, "cfm-a", cfm_cfg, cfm_a, setup.geom));
    auto part_b = std::make_shared<MlpField>(
        train_cached(ctx, "cfm-b", cfm_cfg, cfm_b, setup.geom));
    CompositeField composed({part_a, part_b});

    const Vec corner = {1.0, 1.0};
    RngStream erng(seed, "commutativity-eval");
    PointCloud eval_src = setup.spec.source.sample(eopt.points, erng);
    std::optional<PointCloud> corner_ref;
    if (setup.gauss) {
      RngStream orng(seed, "commutativity-oracle");
      corner_ref =
          sample_gaussian_oracle(*setup.gauss, corner, eopt.points, orng);
    }
    auto cfm_rep =
        commutativity_gap(composed, eval_src, corner, eopt.steps,
                          corner_ref ? &*corner_ref : nullptr, eopt.method);
    metrics["commutativity"]["cfm_composition"] = commutativity_json(cfm_rep);
    metrics["commutativity"]["pifm_not_worse_than_cfm"] =
        metrics["commutativity"]["pifm"]["max_gap"].get<double>() <=
        cfm_rep.max_gap;

    RngStream prng(seed, "plot");
    PointCloud m1 = setup.spec.targets[0].sample(eopt.oracle_points, prng);
    PointCloud m2 = setup.spec.targets[1].sample(eopt.oracle_points, prng);
    std::vector<std::pair<std::string, const PointCloud*>> cs = {
        {"source", &eval_src}, {"target-t", &m1}, {"target-s", &m2}};
    for (const auto& e : cfm_rep.endpoints) cs.push_back({e.strategy, &e.cloud});
    plot_layers(ctx, "plots/cfm_composition.svg", cs,
                setup.name + ": CFM composition at (1,1)");
  }
  return metrics;
}

json run_domain_shift(Ctx& ctx, std::uint64_t seed, const Config& c) {
  TrainConfig cfg0 = apply_train_overrides(c, [&] {
    TrainConfig t;
    t.seed = seed;
    t.steps = 2000;
    return t;
  }());
  EvalOptions eopt = apply_eval_overrides(c, [] {
    EvalOptions e;
    e.seeds = 10;
    return e;
  }());
  DomainShiftSetup setup = make_domain_shift_setup(c);

  const double floor = sampling_floor(
      [&](RngStream& r) { return sample_shape(setup.expected, eopt.points, r); },
      seed, "expected-floor");

  json per_seed = json::array();
  std::vector<double> w2s;
  PointCloud last_endpoint, last_unseen, last_expected;
  for (std::size_t rep = 0; rep < eopt.seeds; ++rep) {
    TrainConfig cfg = cfg0;
    cfg.seed = cfg0.seed + rep;
    MlpField field(train_cached(ctx, "pifm-seed" + std::to_string(cfg.seed), cfg,
                                setup.spec, setup.geom));
    const double w2 = eval_domain_shift_model(
        field, setup, eopt, cfg.seed, &last_unseen, &last_endpoint,
        &last_expected);
    w2s.push_back(w2);
    json e;
    e["seed"] = cfg.seed;
    e["w2"] = w2;
    per_seed.push_back(e);
  }

  double mean = 0.0;
  for (double v : w2s) mean += v;
  mean /= static_cast<double>(w2s.size());
  double var = 0.0;
  for (double v : w2s) var += (v - mean) * (v - mean);
  const double stddev =
      w2s.size() > 1 ? std::sqrt(var / static_cast<double>(w2s.size() - 1)) : 0.0;

  json metrics;
  metrics["scenario"] = "domain-shift";
  metrics["seed"] = seed;
  metrics["per_seed"] = per_seed;
  metrics["w2_mean"] = mean;
  metrics["w2_std"] = stddev;
  metrics["sampling_floor"] = floor;
  metrics["threshold"] = 0.5;
  metrics["pass"] = mean <= 0.5;
  metrics["gaps"] = json::array();
  metrics["target_w2"] = mean;

  fs::create_directories(ctx.out + "/plots");
  plot_layers(ctx, "plots/domain_shift.svg",
              {{"unseen-source", &last_unseen},
               {"expected", &last_expected},
               {"model", &last_endpoint}},
              "domain shift: unseen middle source");
  return metrics;
}

json run_curly(Ctx& ctx, std::uint64_t seed, const Config& c) {
  Setup setup = make_curly_setup();
  TrainConfig cfg = apply_train_overrides(c, [&] {
    TrainConfig t;
    t.seed = seed;
    t.steps = 3000;
    t.coupling = CouplingMode::prescribed;
    return t;
  }());
  EvalOptions eopt = apply_eval_overrides(c, EvalOptions{});

  RngStream erng(seed, "curly-eval");
  PointCloud eval_src = setup.spec.source.sample(eopt.points, erng);
  PointCloud target_draw = setup.spec.source.sample(eopt.points, erng);
  PointCloud target =
      apply_map(target_draw, Matrix::scaled_identity(2, -3.0), {0.0, 0.0});

  TrainConfig cfg0 = cfg;
  cfg0.lambda = 0.0;
  TrainConfig cfg1 = cfg;
  if (cfg1.lambda == 0.0) cfg1.lambda = 1.0;

  MlpField f0(train_cached(ctx, "lambda0", cfg0, setup.spec, setup.geom));
  MlpField f1(train_cached(ctx, "lambda1", cfg1, setup.spec, setup.geom));

  json m0 = eval_curly_model(f0, setup, eval_src, target, eopt, seed);
  json m1 = eval_curly_model(f1, setup, eval_src, target, eopt, seed);

  json metrics;
  metrics["scenario"] = "curly";
  metrics["seed"] = seed;
  metrics["lambda0"] = m0;
  metrics["lambda1"] = m1;
  metrics["lambda1_value"] = cfg1.lambda;
  // distance between the source law and the -3x target: the scale against
  // which the per-strategy target distances should be read
  metrics["source_target_w2"] = w2_exact(eval_src, target);
  json cmp;
  cmp["target_w2_ordered"] =
      m1["max_target_w2"].get<double>() < m0["max_target_w2"].get<double>();
  cmp["gap_ordered"] = m1["max_gap"].get<double>() < m0["max_gap"].get<double>();
  metrics["comparison"] = cmp;
  metrics["gaps"] = m1["pairwise"];
  metrics["target_w2"] = m1["max_target_w2"];
  metrics["sampling_floor"] = m1["sampling_floor"];

  fs::create_directories(ctx.out + "/plots");
  auto plot_model = [&](const MlpField& f, const std::string& label) {
    std::vector<std::pair<std::string, PointCloud>> eps;
    for (const auto& s : enumerate_strategies(2, {1.0, 1.0}))
      eps.emplace_back(s.name(), generate(f, eval_src, s, eopt.steps));
    std::vector<std::pair<std::string, const PointCloud*>> cs = {
        {"source", &eval_src}, {"target", &target}};
    for (auto& [n2, cl] : eps) cs.push_back({n2, &cl});
    plot_layers(ctx, "plots/curly_" + label + ".svg", cs, "curly " + label);
  };
  plot_model(f0, "lambda0");
  plot_model(f1, "lambda1");
  return metrics;
}

TrainConfig default_cfg(std::uint64_t seed, std::size_t steps = 4000) {
  TrainConfig t;
  t.seed = seed;
  t.steps = steps;
  return t;
}

EvalOptions default_eopt(std::size_t points, double grid = 0.25) {
  EvalOptions e;
  e.points = points;
  e.grid_spacing = grid;
  return e;
}

json run_named(Ctx& ctx, const std::string& name, std::uint64_t seed,
               const Config& overrides) {
  if (name == "gaussian-oracle")
    return run_grid_scenario(ctx, make_gaussian_setup(), seed, overrides,
                             default_cfg(seed), default_eopt(1024), true);
  if (name == "fig1-multimarginal")
    return run_grid_scenario(ctx, make_fig1_setup(false), seed, overrides,
                             default_cfg(seed), default_eopt(512), true);
  if (name == "barycenter-grid")
    return run_grid_scenario(ctx, make_fig1_setup(true), seed, overrides,
                             default_cfg(seed), default_eopt(512), false);
  if (name == "appendix-shapes")
    return run_grid_scenario(ctx, make_appendix_setup(), seed, overrides,
                             default_cfg(seed, 2000), default_eopt(512, 0.5),
                             false);
  if (name == "domain-shift") return run_domain_shift(ctx, seed, overrides);
  if (name == "curly") return run_curly(ctx, seed, overrides);
  std::string msg = "unknown scenario '" + name + "'; available:";
  for (const auto& n : names()) msg += " " + n;
  throw ParamError(msg);
}

void assert_finite(const json& j, const std::string& path) {
  if (j.is_number_float() && !std::isfinite(j.get<double>()))
    throw std::runtime_error("non-finite metric at " + path);
  if (j.is_object())
    for (auto& [k, v] : j.items()) assert_finite(v, path + "/" + k);
  if (j.is_array())
    for (std::size_t i = 0; i < j.size(); ++i)
      assert_finite(j[i], path + "/" + std::to_string(i));
}

}  // namespace

std::vector<std::string> names() {
  return {"fig1-multimarginal", "gaussian-oracle", "barycenter-grid",
          "domain-shift",       "curly",           "appendix-shapes"};
}

json run(const std::string& name, std::uint64_t seed, const Config& overrides,
         const std::string& out_dir, const std::string& cache_dir) {
  fs::create_directories(out_dir);
  Ctx ctx;
  ctx.out = out_dir;
  ctx.cache = cache_dir;

  const auto t0 = std::chrono::steady_clock::now();
  json metrics = run_named(ctx, name, seed, overrides);
  overrides.check_all_consumed();
  ctx.phases["wall_total_ms"] = ms_since(t0);
  assert_finite(metrics, name);

  json config_echo = json::object();
  for (const auto& [k, v] : overrides.values()) config_echo[k] = v;
  metrics["config"] = config_echo;

  write_json(ctx.file("metrics.json"), metrics);
  {
    std::ofstream f(ctx.file("resolved.cfg"));
    f << "# pifm scenario " << name << ", seed " << seed << "\n";
    for (const auto& [k, v] : overrides.values()) f << k << " = " << v << "\n";
  }
  write_manifest(out_dir, config_echo, seed, ctx.phases, ctx.files);
  return metrics;
}

json evaluate(const std::string& name, const ModelParams& params,
              std::uint64_t seed, const Config& overrides,
              const std::string& out_dir) {
  fs::create_directories(out_dir);
  Ctx ctx;
  ctx.out = out_dir;
  MlpField field(params);
  json metrics;

  if (name == "gaussian-oracle" || name == "fig1-multimarginal" ||
      name == "barycenter-grid" || name == "appendix-shapes") {
    Setup setup = name == "gaussian-oracle" ? make_gaussian_setup()
                  : name == "appendix-shapes"
                      ? make_appendix_setup()
                      : make_fig1_setup(name == "barycenter-grid");
    EvalOptions eopt = apply_eval_overrides(
        overrides,
        default_eopt(name == "gaussian-oracle" ? 1024 : 512,
                     name == "appendix-shapes" ? 0.5 : 0.25));
    if (params.cfg.n_heads != 2 || params.cfg.dim != 2)
      throw ParamError("evaluate: checkpoint does not match scenario dims");
    metrics = eval_grid_scenario(ctx, field, setup, eopt, seed);
  } else if (name == "curly") {
    Setup setup = make_curly_setup();
    EvalOptions eopt = apply_eval_overrides(overrides, EvalOptions{});
    if (params.cfg.n_heads != 2 || params.cfg.dim != 2)
      throw ParamError("evaluate: checkpoint does not match scenario dims");
    RngStream erng(seed, "curly-eval");
    PointCloud eval_src = setup.spec.source.sample(eopt.points, erng);
    PointCloud target_draw = setup.spec.source.sample(eopt.points, erng);
    PointCloud target =
        apply_map(target_draw, Matrix::scaled_identity(2, -3.0), {0.0, 0.0});
    metrics = eval_curly_model(field, setup, eval_src, target, eopt, seed);
    metrics["gaps"] = metrics["pairwise"];
    metrics["target_w2"] = metrics["max_target_w2"];
  } else if (name == "domain-shift") {
    Config c = overrides;
    DomainShiftSetup setup = make_domain_shift_setup(c);
    EvalOptions eopt = apply_eval_overrides(c, EvalOptions{});
    if (params.cfg.n_heads != 2 || params.cfg.dim != 2)
      throw ParamError("evaluate: checkpoint does not match scenario dims");
    const double w2 =
        eval_domain_shift_model(field, setup, eopt, seed, nullptr, nullptr,
                                nullptr);
    metrics["w2"] = w2;
    metrics["target_w2"] = w2;
    metrics["gaps"] = json::array();
    metrics["sampling_floor"] = sampling_floor(
        [&](RngStream& r) { return sample_shape(setup.expected, eopt.points, r); },
        seed, "expected-floor");
  } else {
    std::string msg = "unknown scenario '" + name + "'; available:";
    for (const auto& n : names()) msg += " " + n;
    throw ParamError(msg);
  }

  metrics["scenario"] = name;
  metrics["seed"] = seed;
  overrides.check_all_consumed();
  assert_finite(metrics, name);
  write_json(ctx.file("metrics.json"), metrics);
  write_manifest(out_dir, json::object(), seed, ctx.phases, ctx.files);
  return metrics;
}

}  // namespace pifm::scenarios
