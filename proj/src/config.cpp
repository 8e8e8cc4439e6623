#include "dgl/config.hpp"

#include <fstream>
#include <sstream>

#include "dgl/errors.hpp"

namespace dgl {

nlohmann::json default_config() {
  using nlohmann::json;
  auto iso = [](double v) { return json::array({v, 0.0, 0.0, v}); };
  json p = {{"dim", 2},
            {"components",
             {{{"weight", 1.0 / 3.0}, {"mean", {-1.5, 0.0}}, {"cov", iso(0.15)}},
              {{"weight", 1.0 / 3.0}, {"mean", {1.5, 0.0}}, {"cov", iso(0.15)}},
              {{"weight", 1.0 / 3.0}, {"mean", {0.0, 1.5}}, {"cov", iso(0.15)}}}}};
  json p_hat = {{"dim", 2},
                {"components",
                 {{{"weight", 0.5}, {"mean", {-1.2, 0.3}}, {"cov", iso(0.25)}},
                  {{"weight", 0.3}, {"mean", {1.2, 0.3}}, {"cov", iso(0.25)}},
                  {{"weight", 0.2}, {"mean", {0.0, 1.2}}, {"cov", iso(0.25)}}}}};
  // Weights 1/3 are not representable; the mixture check allows 1e-12.
  return {{"distributions", {{"P", p}, {"P_hat", p_hat}}},
          {"schedule", {{"kind", "subvp"}, {"beta_min", 0.1}, {"beta_max", 20.0}, {"T", 1.0},
                        {"n_steps", 500}, {"t_min_factor", 1e-3}}},
          {"discriminator", {{"hidden_widths", {64, 64}}, {"activation", "tanh"}}},
          {"loss", {{"lambda", "g_squared"}, {"gamma", 1.0}, {"gamma_on", "ce"}}},
          {"train", train_config_to_json(TrainConfig{})},
          {"sweep", json::object()}};
}

nlohmann::json load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void merge_config(nlohmann::json& base, const nlohmann::json& overlay) {
  if (!base.is_object() || !overlay.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
      merge_config(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

void apply_override(nlohmann::json& config, const std::string& dotted_path, const std::string& value) {
  if (dotted_path.empty()) throw ConfigError("empty override path");
  nlohmann::json* node = &config;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_path.find('.', start);
    const std::string key = dotted_path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("malformed override path '" + dotted_path + "'");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + dotted_path + "' descends into a non-object");
      *node = nlohmann::json::object();
    }
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    *node = nlohmann::json::parse(value);
  } catch (const nlohmann::json::parse_error&) {
    *node = value;
  }
}

namespace {

template <class Fn>
auto in_block(const char* block, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config block '") + block + "': " + e.what());
  }
}

const nlohmann::json& block_or_empty(const nlohmann::json& cfg, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!cfg.contains(name)) return empty;
  const auto& b = cfg.at(name);
  if (!b.is_object()) throw ConfigError(std::string("config block '") + name + "' must be an object");
  return b;
}

}  // namespace

RunConfig parse_run_config(const nlohmann::json& config) {
  if (!config.is_object()) throw ConfigError("config must be a JSON object");
  static const char* known[] = {"distributions", "schedule", "discriminator", "loss", "train", "sweep"};
  for (auto it = config.begin(); it != config.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError("unknown config block '" + it.key() + "'");
  }
  nlohmann::json merged = default_config();
  merge_config(merged, config);

  const auto& dist = block_or_empty(merged, "distributions");
  GaussianMixture p = in_block("distributions", [&] { return mixture_from_json(dist.at("P")); });
  GaussianMixture p_hat = in_block("distributions", [&] { return mixture_from_json(dist.at("P_hat")); });
  if (p.dim() != p_hat.dim()) throw ConfigError("config block 'distributions': P and P_hat dimensions differ");

  RunConfig rc{merged, std::move(p), std::move(p_hat), {}, 500, {}, {}, {}};
  const auto& sched = block_or_empty(merged, "schedule");
  rc.schedule = in_block("schedule", [&] { return schedule_from_json(sched); });
  rc.sampler_steps = in_block("schedule", [&] { return sched.value("n_steps", std::size_t{500}); });
  if (rc.sampler_steps == 0) throw ConfigError("config block 'schedule': n_steps must be >= 1");

  const auto& disc = block_or_empty(merged, "discriminator");
  rc.arch = in_block("discriminator", [&] {
    nlohmann::json a = disc;
    a["data_dim"] = rc.p.dim();
    a["horizon"] = rc.schedule.horizon;
    return architecture_from_json(a);
  });

  rc.train = in_block("train", [&] { return train_config_from_json(block_or_empty(merged, "train")); });
  rc.train.loss = in_block("loss", [&] { return loss_config_from_json(block_or_empty(merged, "loss")); });
  in_block("train", [&] {
    rc.train.validate();
    return 0;
  });
  rc.sweep = block_or_empty(merged, "sweep");
  return rc;
}

}  // namespace dgl
