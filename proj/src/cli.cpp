#include "dgl/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "dgl/config.hpp"
#include "dgl/errors.hpp"
#include "dgl/experiments.hpp"
#include "dgl/io.hpp"
#include "dgl/metrics.hpp"

namespace dgl {
namespace {

using nlohmann::json;

std::string fmt(double v) { return format_double(v); }

template <class T>
T sweep_value(const RunConfig& rc, const char* key, T fallback) {
  if (!rc.sweep.contains(key)) return fallback;
  try {
    return rc.sweep.at(key).get<T>();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config block 'sweep': key '") + key + "': " + e.what());
  }
}

KlOptions kl_options(const RunConfig& rc, std::uint64_t seed) {
  KlOptions kl;
  const json k = sweep_value<json>(rc, "kl", json::object());
  kl.mc = k.value("mc", kl.mc);
  kl.time_nodes = k.value("time_nodes", kl.time_nodes);
  kl.seed = derive_seed(seed, k.value("stream", std::uint64_t{7}));
  if (kl.mc < 2 || kl.time_nodes < 2) throw ConfigError("config block 'sweep': kl.mc and kl.time_nodes must be >= 2");
  return kl;
}

Box box_from_json(const json& j, int dim, const char* what) {
  Box b;
  const auto lo = j.at("lower").get<std::vector<double>>();
  const auto hi = j.at("upper").get<std::vector<double>>();
  if (static_cast<int>(lo.size()) != dim || static_cast<int>(hi.size()) != dim)
    throw ConfigError(std::string("config block 'sweep': ") + what + " bounds must have " + std::to_string(dim) +
                      " entries");
  b.lower = Eigen::Map<const Vector>(lo.data(), dim);
  b.upper = Eigen::Map<const Vector>(hi.data(), dim);
  return b;
}

GridSpec grid_spec(const RunConfig& rc) {
  GridSpec g;
  const int dim = rc.p.dim();
  const json j = sweep_value<json>(rc, "grid", json::object());
  if (j.contains("lower")) {
    g.box = box_from_json(j, dim, "grid");
  } else {
    g.box.lower = Vector::Constant(dim, -3.0);
    g.box.upper = Vector::Constant(dim, 3.0);
  }
  g.resolution = j.value("resolution", 64);
  return g;
}

std::vector<double> t_set(const RunConfig& rc) {
  return sweep_value<std::vector<double>>(rc, "t_set", {0.1, 0.2, 0.3, 0.5});
}

std::unique_ptr<Discriminator> load_discriminator(const std::string& spec, const RunConfig& rc) {
  if (spec == "optimal") return std::make_unique<OptimalDiscriminator>(RatioField(rc.p, rc.p_hat), rc.schedule);
  if (spec == "zero") return std::make_unique<ZeroDiscriminator>(rc.p.dim());
  auto disc = std::make_unique<MlpDiscriminator>(load_checkpoint(spec));
  if (disc->dim() != rc.p.dim()) throw ConfigError("checkpoint '" + spec + "' has the wrong data dimension");
  return disc;
}

std::string points_csv(const Points& pts) {
  std::vector<std::string> header;
  for (Eigen::Index d = 0; d < pts.cols(); ++d) header.push_back("x" + std::to_string(d));
  CsvTable t(header);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    std::vector<std::string> row;
    for (Eigen::Index d = 0; d < pts.cols(); ++d) row.push_back(fmt(pts(i, d)));
    t.add_row(std::move(row));
  }
  return t.str();
}

Points points_from_csv(const std::string& path) {
  const auto rows = read_numeric_csv(path, nullptr);
  if (rows.empty()) throw std::runtime_error("'" + path + "' has no data rows");
  Points p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t d = 0; d < rows[i].size(); ++d) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = rows[i][d];
  return p;
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct SubcommandArgs {
  std::vector<double> eps{0.01};
  std::vector<double> omegas{0.0, 1.0, 3.0, 10.0, 30.0, 100.0};
  std::vector<double> w_list;
  double w = 1.0;
  std::string disc = "optimal";
  std::size_t n = 0;
  std::vector<std::size_t> sizes;
  std::string samples_path, reference_path;
  std::size_t permutations = 200;
};

// ---------------------------------------------------------------------------

void cmd_train(const RunConfig& rc, RunManifest& m) {
  const ScoreFn s_theta = mixture_score_fn(rc.p_hat, rc.schedule);
  const Datasets data = prepare_datasets(rc.p, rc.p_hat, rc.train, rc.schedule);
  MlpDiscriminator disc = MlpDiscriminator::initialized(rc.arch, derive_seed(rc.train.seed, 20));
  TrainConfig cfg = rc.train;
  if (cfg.checkpoint_every && cfg.checkpoint_path.empty()) cfg.checkpoint_path = (m.out_dir() / "checkpoint.bin").string();
  const TrainReport rep = train(disc, s_theta, data, cfg, rc.schedule);

  CsvTable log({"step", "term", "value", "se"});
  for (std::size_t s = 0; s < rep.steps_completed; ++s) {
    log.add_row({std::to_string(s), "ce", fmt(rep.ce[s]), ""});
    log.add_row({std::to_string(s), "mse", fmt(rep.mse[s]), ""});
    log.add_row({std::to_string(s), "total", fmt(rep.total[s]), ""});
  }
  const KlOptions kl = kl_options(rc, rc.train.seed);
  const Estimate learned = kl_learned(rc.p, s_theta, rc.schedule, kl);
  const Estimate refined = kl_refined(rc.p, s_theta, disc, sweep_value(rc, "w", 1.0), rc.schedule, kl);
  std::optional<double> gfm;
  if (rc.p.dim() <= 2)
    gfm = weighted_gradient_field_mse(gradient_field_mse(disc, rc.p, rc.p_hat, rc.schedule, grid_spec(rc), t_set(rc)));
  const std::string final_step = std::to_string(rep.steps_completed);
  log.add_row({final_step, "kl_learned", fmt(learned.value), fmt(learned.se)});
  log.add_row({final_step, "kl_refined", fmt(refined.value), fmt(refined.se)});
  if (gfm) log.add_row({final_step, "grad_field_mse", fmt(*gfm), ""});
  m.emit("loss_log.csv", log.str());

  std::ostringstream ckpt;
  save_checkpoint(disc, ckpt);
  m.emit("checkpoint.bin", ckpt.str());
  json report = train_report_to_json(rep);
  report.erase("wall_seconds");
  m.emit("report.json", report.dump(2) + "\n");
  m.set_metric("kl_learned", {{"value", learned.value}, {"se", learned.se}});
  m.set_metric("kl_refined", {{"value", refined.value}, {"se", refined.se}});
  if (gfm) m.set_metric("grad_field_mse", *gfm);
  m.set_metric("steps_completed", rep.steps_completed);
  m.set_metric("wall_seconds", rep.wall_seconds);
}

void cmd_sample(const RunConfig& rc, const SubcommandArgs& a, std::uint64_t seed, RunManifest& m) {
  const auto disc = load_discriminator(a.disc, rc);
  ReverseSamplerOptions ro;
  ro.n_steps = rc.sampler_steps;
  ro.n_samples = a.n ? a.n : sweep_value<std::size_t>(rc, "n_samples", 1000);
  const Points pts = guided_generate(mixture_score_fn(rc.p_hat, rc.schedule), *disc, a.w, rc.schedule, ro,
                                     rc.p.dim(), derive_seed(seed, 30));
  m.emit("samples.csv", points_csv(pts));
  m.set_metric("n_samples", ro.n_samples);
}

void cmd_theorem1(const RunConfig& rc, const SubcommandArgs& a, std::uint64_t seed, RunManifest& m) {
  const json t1 = sweep_value<json>(rc, "theorem1", json::object());
  auto gaussian_1d = [](double mu) { return GaussianMixture::gaussian(Vector::Constant(1, mu), Matrix::Identity(1, 1)); };
  const GaussianMixture p = t1.contains("P") ? mixture_from_json(t1.at("P")) : gaussian_1d(0.0);
  const GaussianMixture p_hat = t1.contains("P_hat") ? mixture_from_json(t1.at("P_hat")) : gaussian_1d(0.5);
  Theorem1Options opts;
  if (t1.contains("region")) {
    opts.region = box_from_json(t1.at("region"), p.dim(), "theorem1.region");
  } else {
    opts.region.lower = Vector::Constant(p.dim(), -6.0);
    opts.region.upper = Vector::Constant(p.dim(), 6.0);
  }
  opts.t = t1.value("t", 0.0);
  opts.kl = kl_options(rc, seed);
  const auto rows = theorem1_demo(p, p_hat, rc.schedule, a.eps, a.omegas, opts);
  CsvTable t({"epsilon", "omega", "feasible", "ce_gap", "gradient_error", "kl_refined", "kl_refined_se", "kl_learned",
              "kl_learned_se", "error"});
  for (const auto& r : rows)
    t.add_row({fmt(r.epsilon), fmt(r.omega), r.feasible ? "1" : "0", fmt(r.ce_gap), fmt(r.gradient_error),
               fmt(r.kl_refined), fmt(r.kl_refined_se), fmt(r.kl_learned), fmt(r.kl_learned_se), r.error});
  m.emit("theorem1.csv", t.str());
  m.set_metric("rows", rows.size());
}

void cmd_overfit(const RunConfig& rc, const SubcommandArgs& a, std::uint64_t seed, RunManifest& m) {
  const json o = sweep_value<json>(rc, "overfit", json::object());
  const auto mus = o.value("mu", std::vector<double>{0.5, 4.65});
  const auto sizes = !a.sizes.empty() ? a.sizes : o.value("sizes", std::vector<std::size_t>{100, 400, 1600});
  const double eps = a.eps.size() == 1 ? a.eps.front() : o.value("eps", 0.01);
  OverfitOptions opts;
  opts.max_steps = o.value("max_steps", opts.max_steps);
  opts.learning_rate = o.value("learning_rate", opts.learning_rate);
  opts.seed = seed;
  CsvTable t({"mu", "tv", "n", "width", "achieved_eps", "reached", "steps", "mse_estimate", "mse_over_n",
              "gradient_scale"});
  const GaussianMixture p = GaussianMixture::gaussian(Vector::Zero(1), Matrix::Identity(1, 1));
  for (double mu : mus) {
    const GaussianMixture p_hat = GaussianMixture::gaussian(Vector::Constant(1, mu), Matrix::Identity(1, 1));
    for (std::size_t n : sizes) {
      const OverfitResult r = overfit_harness(p, p_hat, n, eps, opts);
      t.add_row({fmt(mu), fmt(r.tv), std::to_string(n), std::to_string(r.width), fmt(r.achieved_eps),
                 r.reached ? "1" : "0", std::to_string(r.steps), fmt(r.mse_estimate),
                 fmt(r.mse_estimate / static_cast<double>(n)), fmt(r.optimal_baseline)});
    }
  }
  m.emit("overfit.csv", t.str());
}

void cmd_size_sweep(const RunConfig& rc, const SubcommandArgs& a, std::uint64_t seed, RunManifest& m) {
  SizeSweepOptions o;
  o.sizes = !a.sizes.empty() ? a.sizes : sweep_value<std::vector<std::size_t>>(rc, "sizes", {200, 2000, 20000});
  o.gammas = sweep_value<std::vector<double>>(rc, "gammas", {1.0});
  o.seeds = sweep_value<std::vector<std::uint64_t>>(rc, "seeds", {seed});
  o.w = sweep_value(rc, "w", 1.0);
  o.kl = kl_options(rc, seed);
  if (rc.p.dim() <= 2) {
    o.grid = grid_spec(rc);
    o.t_set = t_set(rc);
  }
  o.arch = rc.arch;
  const auto rows = size_sweep(rc.p, rc.p_hat, rc.train, rc.schedule, o);
  CsvTable t({"size", "objective", "gamma", "seed", "kl_refined", "kl_se", "grad_field_mse", "error"});
  for (const auto& r : rows)
    t.add_row({std::to_string(r.size), r.objective, fmt(r.gamma), std::to_string(r.seed), fmt(r.kl_refined),
               fmt(r.kl_se), fmt(r.grad_field_mse), r.error});
  m.emit("size_sweep.csv", t.str());
}

SampleMetricsOptions sample_metrics_options(const RunConfig& rc, std::uint64_t seed) {
  SampleMetricsOptions o;
  o.n_samples = sweep_value<std::size_t>(rc, "n_samples", 1000);
  o.sampler_steps = rc.sampler_steps;
  o.kl = kl_options(rc, seed);
  o.seed = derive_seed(seed, 40);
  return o;
}

void cmd_w_sweep(const RunConfig& rc, const SubcommandArgs& a, std::uint64_t seed, RunManifest& m) {
  const auto disc = load_discriminator(a.disc, rc);
  const auto w_list =
      !a.w_list.empty() ? a.w_list : sweep_value<std::vector<double>>(rc, "w_list", {0.0, 0.5, 1.0, 1.5, 2.0});
  const auto rows = w_sweep(rc.p, mixture_score_fn(rc.p_hat, rc.schedule), *disc, w_list, rc.schedule,
                            sample_metrics_options(rc, seed));
  CsvTable t({"w", "kl", "kl_se", "energy", "precision", "recall", "error"});
  for (const auto& r : rows)
    t.add_row({fmt(r.w), fmt(r.kl), fmt(r.kl_se), fmt(r.energy), fmt(r.precision), fmt(r.recall), r.error});
  m.emit("w_sweep.csv", t.str());
}

void cmd_gamma_sweep(const RunConfig& rc, std::uint64_t seed, RunManifest& m) {
  GammaSweepOptions o;
  o.gammas = sweep_value<std::vector<double>>(rc, "gammas", {0.1, 1.0, 10.0});
  o.include_ce_only = sweep_value(rc, "include_ce_only", true);
  o.seeds = sweep_value<std::vector<std::uint64_t>>(rc, "seeds", {seed});
  o.w = sweep_value(rc, "w", 1.0);
  o.arch = rc.arch;
  if (rc.p.dim() <= 2) {
    o.grid = grid_spec(rc);
    o.t_set = t_set(rc);
  }
  o.metrics = sample_metrics_options(rc, seed);
  o.with_samples = sweep_value(rc, "with_samples", true);
  const auto rows = gamma_sweep(rc.p, rc.p_hat, rc.train, rc.schedule, o);
  CsvTable t({"objective", "gamma", "seed", "final_ce", "final_mse", "grad_field_mse", "kl", "kl_se", "energy",
              "precision", "recall", "error"});
  for (const auto& r : rows)
    t.add_row({r.objective, fmt(r.gamma), std::to_string(r.seed), fmt(r.final_ce), fmt(r.final_mse),
               fmt(r.grad_field_mse), fmt(r.kl), fmt(r.kl_se), fmt(r.energy), fmt(r.precision), fmt(r.recall),
               r.error});
  m.emit("gamma_sweep.csv", t.str());
}

void cmd_metrics(const SubcommandArgs& a, std::uint64_t seed, RunManifest& m) {
  if (a.samples_path.empty() || a.reference_path.empty())
    throw ConfigError("metrics needs --samples and --reference");
  const Points samples = points_from_csv(a.samples_path);
  const Points reference = points_from_csv(a.reference_path);
  const PrecisionRecall pr = knn_precision_recall(reference, samples, 3);
  const EnergyTest et = energy_permutation_test(samples, reference, a.permutations, derive_seed(seed, 50));
  CsvTable t({"precision", "recall", "energy", "p_value", "permutations", "degenerate"});
  t.add_row({fmt(pr.precision), fmt(pr.recall), fmt(et.statistic), fmt(et.p_value), std::to_string(et.permutations),
             pr.degenerate ? "1" : "0"});
  m.emit("metrics.csv", t.str());
  if (pr.degenerate) std::cerr << "warning: duplicate points gave zero k-NN radii; floored at 1e-12\n";
}

// Dotted overrides left over after CLI11 parsing: "--a.b value" or "--a.b=value".
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0) throw CLI::ExtrasError({tok});
    std::string key = tok.substr(2);
    std::string value;
    const auto eq = key.find('=');
    if (eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("override '" + tok + "' is missing a value");
      value = extras[++i];
    }
    if (key.find('.') == std::string::npos) throw CLI::ExtrasError({tok});
    out.emplace_back(key, value);
  }
  return out;
}

std::filesystem::path output_dir(const Globals& g, const std::string& config_hash) {
  if (!g.out.empty()) return g.out;
  if (const char* env = std::getenv("DGL_OUTPUT_DIR"); env && *env) return env;
  return std::filesystem::path("runs") / (utc_timestamp() + "-" + config_hash.substr(0, 8));
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Discriminator-guided diffusion lab: training, guided sampling and diagnostics"};
  app.name("dglab");
  app.require_subcommand(1);
  app.fallthrough();
  // Dotted config overrides are collected as extras and validated after parsing.
  app.allow_extras();

  Globals g;
  SubcommandArgs a;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "JSON run config");
  auto* seed_opt = app.add_option("--seed", seed_value, "run seed (overrides train.seed)");
  app.add_option("--out", g.out, "output directory (default: $DGL_OUTPUT_DIR or runs/<timestamp>-<hash>)");

  auto add_sub = [&](const char* name, const char* help) {
    return app.add_subcommand(name, help);
  };
  auto* train_cmd = add_sub("train", "train a discriminator with the configured loss");
  auto* sample_cmd = add_sub("sample", "guided reverse-SDE sampling");
  sample_cmd->add_option("--w", a.w, "guidance weight");
  sample_cmd->add_option("--disc", a.disc, "optimal | zero | path to a checkpoint");
  sample_cmd->add_option("--n", a.n, "number of samples");
  auto* t1_cmd = add_sub("theorem1", "oscillatory discriminator sweep");
  t1_cmd->add_option("--eps", a.eps, "epsilon values")->delimiter(',');
  t1_cmd->add_option("--omegas", a.omegas, "omega values")->delimiter(',');
  auto* overfit_cmd = add_sub("overfit", "1D overfitting harness");
  overfit_cmd->add_option("--eps", a.eps, "target per-sample loss")->delimiter(',');
  overfit_cmd->add_option("--sizes", a.sizes, "training-set sizes")->delimiter(',');
  auto* size_cmd = add_sub("size-sweep", "training-set size sweep");
  size_cmd->add_option("--sizes", a.sizes, "training-set sizes")->delimiter(',');
  auto* w_cmd = add_sub("w-sweep", "guidance weight sweep");
  w_cmd->add_option("--w", a.w_list, "guidance weights")->delimiter(',');
  w_cmd->add_option("--disc", a.disc, "optimal | zero | path to a checkpoint");
  auto* gamma_cmd = add_sub("gamma-sweep", "gamma sweep of the combined loss");
  auto* metrics_cmd = add_sub("metrics", "precision/recall and energy test between two point CSVs");
  metrics_cmd->add_option("--samples", a.samples_path, "CSV of evaluated points");
  metrics_cmd->add_option("--reference", a.reference_path, "CSV of reference points");
  metrics_cmd->add_option("--permutations", a.permutations, "permutations for the energy test");

  try {
    app.parse(argc, argv);
    CLI::App* sub = app.get_subcommands().front();
    const auto overrides = parse_overrides(app.remaining(true));

    json cfg = g.config_path.empty() ? json::object() : load_config_file(g.config_path);
    for (const auto& [k, v] : overrides) apply_override(cfg, k, v);
    if (*seed_opt) cfg["train"]["seed"] = seed_value;
    const RunConfig rc = parse_run_config(cfg);
    const std::uint64_t seed = rc.train.seed;

    RunManifest manifest(output_dir(g, git_blob_sha1(canonical_json(rc.raw))), rc.raw, seed, sub->get_name());
    if (sub == train_cmd) cmd_train(rc, manifest);
    else if (sub == sample_cmd) cmd_sample(rc, a, seed, manifest);
    else if (sub == t1_cmd) cmd_theorem1(rc, a, seed, manifest);
    else if (sub == overfit_cmd) cmd_overfit(rc, a, seed, manifest);
    else if (sub == size_cmd) cmd_size_sweep(rc, a, seed, manifest);
    else if (sub == w_cmd) cmd_w_sweep(rc, a, seed, manifest);
    else if (sub == gamma_cmd) cmd_gamma_sweep(rc, seed, manifest);
    else if (sub == metrics_cmd) cmd_metrics(a, seed, manifest);
    manifest.finish();
    std::cout << manifest.out_dir().string() << "\n";
    return kExitOk;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace dgl
