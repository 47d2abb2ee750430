#include <charconv>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gustuq/cli.hpp"
#include "gustuq/common.hpp"
#include "gustuq/error.hpp"

namespace gustuq::cli {

namespace {

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) continue;
    out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  if (!parse_double(value, v)) throw ConfigError("'" + key + "' expects a number, got '" + value + "'");
  return v;
}

std::uint64_t to_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || value.empty()) {
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + value + "'");
  }
  return v;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(to_u64(key, value));
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + value + "'");
}

std::string dashed(std::string key) {
  for (auto& ch : key) {
    if (ch == '_') ch = '-';
  }
  return key;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys{
      "data",          "model",        "out",           "predictions",   "features",     "layout",
      "train_storms",  "val_storms",   "test_storms",   "learning_rate", "batch_size",   "max_epochs",
      "patience",      "lambda",       "hidden_layers", "hidden_units",  "dropout",      "l1",
      "l2",            "levels",       "mask_percentile", "exclude_flagged", "shuffles", "pdp_grid",
      "pdp_features",  "align_k",      "trials",        "tune_weight",   "seed",         "threads"};
  return keys;
}

void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  if (key == "data") {
    c.data = value;
  } else if (key == "model") {
    c.model = value;
  } else if (key == "out") {
    c.out = value;
  } else if (key == "predictions") {
    c.predictions = value;
  } else if (key == "features") {
    c.features = split_list(value);
  } else if (key == "layout") {
    if (value != "station" && value != "grid") throw ConfigError("'layout' must be station or grid");
    c.layout = value;
  } else if (key == "train_storms") {
    c.train_storms = to_size(key, value);
  } else if (key == "val_storms") {
    c.val_storms = to_size(key, value);
  } else if (key == "test_storms") {
    c.test_storms = to_size(key, value);
  } else if (key == "learning_rate") {
    c.train.learning_rate = to_double(key, value);
  } else if (key == "batch_size") {
    c.train.batch_size = to_size(key, value);
  } else if (key == "max_epochs") {
    c.train.max_epochs = to_size(key, value);
  } else if (key == "patience") {
    c.train.patience = to_size(key, value);
  } else if (key == "lambda") {
    c.train.lambda = to_double(key, value);
  } else if (key == "hidden_layers") {
    c.train.hidden_layers = to_size(key, value);
  } else if (key == "hidden_units") {
    c.train.hidden_units = to_size(key, value);
  } else if (key == "dropout") {
    c.train.dropout = to_double(key, value);
  } else if (key == "l1") {
    c.train.l1 = to_double(key, value);
  } else if (key == "l2") {
    c.train.l2 = to_double(key, value);
  } else if (key == "levels") {
    std::vector<double> levels;
    for (const auto& item : split_list(value)) {
      const double l = to_double(key, item);
      if (!(l > 0.0 && l < 1.0)) throw ConfigError("confidence level " + item + " is outside (0, 1)");
      levels.push_back(l);
    }
    if (levels.empty()) throw ConfigError("'levels' needs at least one confidence level");
    c.levels = levels;
  } else if (key == "mask_percentile") {
    const double q = to_double(key, value);
    if (!(q > 0.0 && q < 100.0)) throw ConfigError("'mask_percentile' must lie in (0, 100)");
    c.mask_percentile = q;
  } else if (key == "exclude_flagged") {
    c.exclude_flagged = to_bool(key, value);
  } else if (key == "shuffles") {
    c.shuffles = to_size(key, value);
  } else if (key == "pdp_grid") {
    c.pdp_grid = to_size(key, value);
  } else if (key == "pdp_features") {
    c.pdp_features = split_list(value);
  } else if (key == "align_k") {
    c.align_k = to_size(key, value);
  } else if (key == "trials") {
    c.trials = to_size(key, value);
  } else if (key == "tune_weight") {
    c.tune_weight = to_double(key, value);
  } else if (key == "seed") {
    c.seed = to_u64(key, value);
  } else if (key == "threads") {
    c.threads = std::max<std::size_t>(1, to_size(key, value));
  } else {
    throw ConfigError("unknown setting '" + key + "'");
  }
}

void apply_config_json(RunConfig& config, const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, value] : j.items()) {
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_array()) {
      for (const auto& item : value) {
        if (!text.empty()) text += ',';
        text += item.is_string() ? item.get<std::string>() : item.dump();
      }
    } else if (value.is_boolean() || value.is_number()) {
      text = value.dump();
    } else {
      throw ConfigError("unsupported value for '" + key + "'");
    }
    apply_setting(config, key, text);
  }
}

RunConfig resolve(const std::string& command, const std::optional<std::filesystem::path>& config_file,
                  const std::map<std::string, std::string>& flags) {
  RunConfig config;
  config.command = command;
  if (config_file) {
    if (!std::filesystem::exists(*config_file)) {
      throw UsageError("config file " + config_file->string() + " does not exist");
    }
    apply_config_json(config, read_file(*config_file));
  }
  for (const auto& [key, value] : flags) apply_setting(config, key, value);
  config.train.seed = config.seed;
  return config;
}

void check_inputs(const RunConfig& c) {
  auto need = [&](const std::filesystem::path& p, const char* flag) {
    if (p.empty()) throw UsageError(c.command + " requires --" + flag);
    if (!std::filesystem::exists(p)) throw UsageError("--" + std::string(flag) + " " + p.string() + " does not exist");
  };
  if (c.out.empty()) throw UsageError(c.command + " requires --out");
  if (c.command == "train" || c.command == "tune") {
    need(c.data, "data");
  } else if (c.command == "predict" || c.command == "explain") {
    need(c.model, "model");
    need(c.data, "data");
  } else if (c.command == "evaluate") {
    need(c.predictions, "predictions");
    need(c.data, "data");
  } else if (c.command == "spatial") {
    need(c.predictions, "predictions");
  }
  std::error_code ec;
  std::filesystem::create_directories(c.out, ec);
  if (ec) throw UsageError("cannot create output directory " + c.out.string() + ": " + ec.message());
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Evidential deep learning for wind gusts with uncertainty quantification", "gustuq"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "Train an evidential model on a station table with targets"},
      {"predict", "Predict gusts with uncertainty for a station or grid table"},
      {"evaluate", "Score predictions against observations"},
      {"explain", "Permutation feature importance and partial dependence"},
      {"spatial", "Track spatial maxima of gridded wind speed and uncertainty"},
      {"tune", "Multi-objective hyperparameter search"}};

  std::map<std::string, std::map<std::string, std::string>> values;
  std::map<std::string, std::string> config_path;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path[name], "JSON config file (flags take precedence)");
    for (const auto& key : config_keys()) sub->add_option("--" + dashed(key), values[name][key]);
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: UsageError: " << e.what() << '\n';
    return 2;
  }

  try {
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      std::map<std::string, std::string> flags;
      for (const auto& key : config_keys()) {
        if (sub->get_option("--" + dashed(key))->count() > 0) flags[key] = values[name][key];
      }
      std::optional<std::filesystem::path> cfg;
      if (sub->get_option("--config")->count() > 0) cfg = config_path[name];
      const RunConfig config = resolve(name, cfg, flags);
      check_inputs(config);
      if (name == "train") cmd_train(config);
      if (name == "predict") cmd_predict(config);
      if (name == "evaluate") cmd_evaluate(config);
      if (name == "explain") cmd_explain(config);
      if (name == "spatial") cmd_spatial(config);
      if (name == "tune") cmd_tune(config);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace gustuq::cli
