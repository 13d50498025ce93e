// pifm: train and inspect path-independent flow-matching models on toy
// point-cloud data; see README.md for the command overview.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "pifm/scenarios.hpp"

namespace fs = std::filesystem;
using namespace pifm;

namespace {

DataSource source_from_flags(const std::string& shape_dsl,
                             const std::string& csv_path) {
  if (!shape_dsl.empty() && !csv_path.empty())
    throw ParamError("give either a shape or a CSV source, not both");
  if (!shape_dsl.empty()) return DataSource::of(parse_shape(shape_dsl));
  if (!csv_path.empty()) return DataSource::of(read_cloud_csv(csv_path));
  throw ParamError("a source (--source or --source-csv) is required");
}

Strategy strategy_from_flag(const std::string& text, const Vec& tvec,
                            std::size_t n) {
  if (text == "diagonal") return Strategy::diagonal(tvec);
  if (text.rfind("order:", 0) == 0) {
    Vec idx = parse_vec(text.substr(6));
    std::vector<std::size_t> order;
    for (double v : idx) {
      if (v < 1 || v != std::floor(v))
        throw ParamError("--strategy order wants 1-based axis indices");
      order.push_back(static_cast<std::size_t>(v) - 1);
    }
    return Strategy::axis(order, tvec);
  }
  if (text.rfind("path:", 0) == 0) {
    std::ifstream f(text.substr(5));
    if (!f) throw IoError("cannot open path file: " + text.substr(5));
    PathSpec p;
    std::string key;
    f >> key >> p.steps_per_segment;
    if (key != "steps_per_segment")
      throw IoError("path file must start with 'steps_per_segment K'");
    Vec w(n);
    while (true) {
      bool ok = true;
      for (std::size_t i = 0; i < n; ++i)
        if (!(f >> w[i])) {
          ok = false;
          break;
        }
      if (!ok) break;
      p.waypoints.push_back(w);
    }
    p.validate(n);
    return Strategy::custom_path(p);
  }
  throw ParamError("--strategy must be order:<perm>, diagonal, or path:<file>");
}

int cmd_train(const std::string& config_path, const std::string& out,
              const std::vector<std::string>& sets) {
  Config c = Config::from_file(config_path);
  for (const auto& s : sets) c.apply_override(s);

  TrainConfig cfg;
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
  cfg.activation = activation_from(c.get_string("model.activation", "silu"));
  cfg.fourier = c.get_bool("model.fourier", false);
  cfg.fourier_bands = c.get_size("model.fourier_bands", 4);

  TrainSpec spec;
  spec.source = DataSource::of(parse_shape(c.get_string("data.source", "")));
  for (std::size_t i = 1; i <= cfg.n; ++i) {
    const std::string key = "data.target" + std::to_string(i);
    if (!c.has(key)) throw ParamError("config missing key " + key);
    spec.targets.push_back(DataSource::of(parse_shape(c.get_string(key, ""))));
  }
  c.check_all_consumed();

  fs::create_directories(out);
  TrainResult res = train(cfg, spec);
  write_loss_csv(res.history, out + "/loss.csv");
  save_checkpoint(res.params, out + "/model.ckpt", cfg.echo(), cfg.seed);

  nlohmann::json echo = nlohmann::json::object();
  for (const auto& [k, v] : c.values()) echo[k] = v;
  write_manifest(out, echo, cfg.seed, nlohmann::json::object(),
                 {"loss.csv", "model.ckpt"});
  std::cout << "trained " << cfg.steps << " steps";
  if (!res.history.empty())
    std::cout << "; final fm loss " << res.history.back().fm;
  std::cout << "\n";
  return 0;
}

int cmd_generate(const std::string& ckpt, const std::string& shape_dsl,
                 const std::string& csv_path, const std::string& strategy_flag,
                 const std::string& tvec_flag, std::size_t steps,
                 std::size_t points, std::uint64_t seed, bool all_orders,
                 bool trajectory, const std::string& out) {
  auto ck = load_checkpoint(ckpt);
  MlpField field(ck.params);
  const std::size_t n = field.n_heads();
  Vec tvec = tvec_flag.empty() ? Vec(n, 1.0) : parse_vec(tvec_flag);
  if (tvec.size() != n) throw ParamError("--tvec size must match model heads");

  DataSource source = source_from_flags(shape_dsl, csv_path);
  if (source.dim() != field.dim())
    throw ParamError("source dimension does not match checkpoint");
  RngStream rng(seed, "generate");
  PointCloud cloud = source.sample(points, rng);

  fs::create_directories(out);
  std::vector<std::string> files;
  std::vector<SvgLayer> layers;
  std::vector<std::pair<std::string, PointCloud>> endpoints;

  std::vector<Strategy> strategies;
  if (all_orders) {
    strategies = enumerate_strategies(n, tvec);
  } else {
    strategies.push_back(strategy_from_flag(strategy_flag, tvec, n));
  }
  for (const auto& s : strategies) {
    if (trajectory) {
      Trajectory t =
          integrate_path(field, cloud, strategy_to_path(s, n, steps));
      write_trajectory(t, out + "/trajectory_" + s.name(), s.name());
      endpoints.emplace_back(s.name(), t.clouds.back());
    } else {
      endpoints.emplace_back(s.name(), generate(field, cloud, s, steps));
    }
    const std::string rel = "endpoint_" + s.name() + ".csv";
    write_cloud_csv(endpoints.back().second, out + "/" + rel);
    files.push_back(rel);
  }

  layers.push_back({&cloud, "#1f77b4", "source", 2.0});
  const char* colors[] = {"#ff7f0e", "#2ca02c", "#d62728", "#9467bd"};
  for (std::size_t i = 0; i < endpoints.size(); ++i)
    layers.push_back(
        {&endpoints[i].second, colors[i % 4], endpoints[i].first, 2.0});
  write_scatter_svg(out + "/endpoints.svg", layers, "generated endpoints");
  files.push_back("endpoints.svg");
  write_manifest(out, nlohmann::json::object(), seed, nlohmann::json::object(),
                 files);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& scenario,
             std::uint64_t seed, const std::vector<std::string>& sets,
             const std::string& out) {
  auto ck = load_checkpoint(ckpt);
  Config c;
  for (const auto& s : sets) c.apply_override(s);
  auto metrics = scenarios::evaluate(scenario, ck.params, seed, c, out);
  std::cout << "metrics written to " << out << "/metrics.json\n";
  return 0;
}

int cmd_barycenter(const std::vector<std::string>& marginal_flags,
                   const std::string& lambdas_flag, std::size_t points,
                   double tol, std::size_t max_iter, std::uint64_t seed,
                   const std::string& out) {
  if (marginal_flags.empty()) throw ParamError("at least one --marginal needed");
  Vec lambdas = lambdas_flag.empty()
                    ? Vec(marginal_flags.size(),
                          1.0 / static_cast<double>(marginal_flags.size()))
                    : parse_vec(lambdas_flag);
  double sum = 0.0;
  for (double l : lambdas) {
    if (l < 0.0)
      throw ParamError(
          "negative barycenter weights are outside the free-support oracle's "
          "domain; extrapolation has an oracle only in the Gaussian case");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ParamError("--lambdas must sum to 1");

  std::vector<PointCloud> marginals;
  RngStream rng(seed, "barycenter-marginals");
  for (const auto& m : marginal_flags) {
    if (m.rfind("csv:", 0) == 0)
      marginals.push_back(read_cloud_csv(m.substr(4)));
    else
      marginals.push_back(sample_shape(parse_shape(m), points, rng));
  }

  BarycenterOptions opt;
  opt.tol = tol;
  opt.max_iter = max_iter;
  auto res = free_support_barycenter(marginals, lambdas, opt);

  fs::create_directories(out);
  write_cloud_csv(res.support, out + "/barycenter.csv");
  write_barycenter_report(res, out + "/timing.json");
  std::vector<SvgLayer> layers;
  const char* colors[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b"};
  for (std::size_t i = 0; i < marginals.size(); ++i)
    layers.push_back({&marginals[i], colors[i % 4],
                      "marginal-" + std::to_string(i), 2.0});
  layers.push_back({&res.support, "#d62728", "barycenter", 2.5});
  write_scatter_svg(out + "/barycenter.svg", layers, "free-support barycenter");
  write_manifest(out, nlohmann::json::object(), seed, nlohmann::json::object(),
                 {"barycenter.csv", "timing.json", "barycenter.svg"});
  std::cout << "barycenter: " << res.iterations << " iterations, movement "
            << res.final_movement << ", " << res.wall_ms << " ms\n";
  return 0;
}

int cmd_scenario(const std::string& name, std::uint64_t seed,
                 const std::vector<std::string>& sets, const std::string& out,
                 const std::string& cache) {
  Config c;
  for (const auto& s : sets) c.apply_override(s);
  auto metrics = scenarios::run(name, seed, c, out, cache);
  std::cout << "scenario " << name << " done; metrics at " << out
            << "/metrics.json\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"path-independent flow matching on toy point clouds"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  std::string config_path, out_dir = "out";
  std::vector<std::string> sets;
  train_cmd->add_option("--config", config_path, "config file")->required();
  train_cmd->add_option("--out", out_dir, "output directory");
  train_cmd->add_option("--set", sets, "override section.key=value");

  // generate
  auto* gen_cmd = app.add_subcommand("generate", "integrate a trained field");
  std::string ckpt, shape_dsl, csv_path, strategy_flag = "diagonal", tvec_flag;
  std::size_t steps = 100, points = 512;
  std::uint64_t seed = 1;
  bool all_orders = false, trajectory = false;
  gen_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  gen_cmd->add_option("--source", shape_dsl, "source shape DSL");
  gen_cmd->add_option("--source-csv", csv_path, "source cloud CSV");
  gen_cmd->add_option("--strategy", strategy_flag,
                      "order:<perm> | diagonal | path:<file>");
  gen_cmd->add_option("--tvec", tvec_flag, "terminal parameter point");
  gen_cmd->add_option("--steps", steps, "integration steps");
  gen_cmd->add_option("--points", points, "cloud size");
  gen_cmd->add_option("--seed", seed, "rng seed");
  gen_cmd->add_flag("--all-orders", all_orders, "emit every axis order + diagonal");
  gen_cmd->add_flag("--trajectory", trajectory, "write snapshot CSVs");
  gen_cmd->add_option("--out", out_dir, "output directory");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "metric battery on a checkpoint");
  std::string scenario_name, grid_flag;
  eval_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  eval_cmd->add_option("--scenario", scenario_name, "scenario name")->required();
  eval_cmd->add_option("--seed", seed, "rng seed");
  eval_cmd->add_option("--set", sets, "override section.key=value");
  eval_cmd->add_option("--grid", grid_flag, "simplex grid spacing");
  eval_cmd->add_option("--out", out_dir, "output directory");

  // barycenter
  auto* bary_cmd =
      app.add_subcommand("barycenter", "standalone free-support barycenter");
  std::vector<std::string> marginal_flags;
  std::string lambdas_flag;
  double tol = 1e-6;
  std::size_t max_iter = 200;
  bary_cmd->add_option("--marginal", marginal_flags,
                       "shape DSL or csv:<path> (repeatable)");
  bary_cmd->add_option("--lambdas", lambdas_flag, "simplex weights");
  bary_cmd->add_option("--points", points, "samples per shape marginal");
  bary_cmd->add_option("--tol", tol, "mean-movement stopping tolerance");
  bary_cmd->add_option("--max-iter", max_iter, "iteration cap");
  bary_cmd->add_option("--seed", seed, "rng seed");
  bary_cmd->add_option("--out", out_dir, "output directory");

  // scenario
  auto* scen_cmd = app.add_subcommand("scenario", "full train+eval pipeline");
  std::string cache_dir;
  scen_cmd->add_option("--name", scenario_name, "scenario name")->required();
  scen_cmd->add_option("--seed", seed, "rng seed");
  scen_cmd->add_option("--set", sets, "override section.key=value");
  scen_cmd->add_option("--grid", grid_flag, "simplex grid spacing");
  scen_cmd->add_option("--out", out_dir, "output directory");
  scen_cmd->add_option("--cache", cache_dir, "checkpoint cache directory");

  // shorthand flags for the most-used config keys
  std::string steps_flag, lambda_flag, sigma_flag, coupling_flag, seed_flag;
  for (auto* cmd : {train_cmd, scen_cmd}) {
    cmd->add_option("--steps", steps_flag, "training steps (train.steps)");
    cmd->add_option("--lambda", lambda_flag, "regularization weight (train.lambda)");
    cmd->add_option("--sigma", sigma_flag, "conditional-path sigma (train.sigma)");
    cmd->add_option("--coupling", coupling_flag,
                    "independent | ot | prescribed (train.coupling)");
  }
  train_cmd->add_option("--seed", seed_flag, "rng seed (train.seed)");

  CLI11_PARSE(app, argc, argv);
  if (!grid_flag.empty()) sets.push_back("eval.grid=" + grid_flag);
  if (!steps_flag.empty()) sets.push_back("train.steps=" + steps_flag);
  if (!lambda_flag.empty()) sets.push_back("train.lambda=" + lambda_flag);
  if (!sigma_flag.empty()) sets.push_back("train.sigma=" + sigma_flag);
  if (!coupling_flag.empty()) sets.push_back("train.coupling=" + coupling_flag);
  if (!seed_flag.empty()) sets.push_back("train.seed=" + seed_flag);

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir, sets);
    if (gen_cmd->parsed())
      return cmd_generate(ckpt, shape_dsl, csv_path, strategy_flag, tvec_flag,
                          steps, points, seed, all_orders, trajectory, out_dir);
    if (eval_cmd->parsed())
      return cmd_eval(ckpt, scenario_name, seed, sets, out_dir);
    if (bary_cmd->parsed())
      return cmd_barycenter(marginal_flags, lambdas_flag, points, tol, max_iter,
                            seed, out_dir);
    if (scen_cmd->parsed())
      return cmd_scenario(scenario_name, seed, sets, out_dir, cache_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
