#include "gustuq/model_io.hpp"

#include <algorithm>

#include <json.hpp>

#include "gustuq/common.hpp"
#include "gustuq/error.hpp"

namespace gustuq::io {

using Json = nlohmann::ordered_json;

namespace {

Json config_to_json(const evidential::TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},       {"patience", c.patience},
              {"lambda", c.lambda},               {"seed", c.seed},
              {"hidden_layers", c.hidden_layers}, {"hidden_units", c.hidden_units},
              {"dropout", c.dropout},             {"l1", c.l1},
              {"l2", c.l2}};
}

evidential::TrainConfig config_from_json(const Json& j) {
  evidential::TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
  c.hidden_units = j.at("hidden_units").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.l1 = j.at("l1").get<double>();
  c.l2 = j.at("l2").get<double>();
  return c;
}

}  // namespace

std::string serialize(const ModelArtifact& a) {
  a.model.validate();
  if (!a.standardizer.fitted()) throw UsageError("cannot save a model without fitted feature statistics");
  const auto names = a.feature_names();
  if (names.size() != a.model.input_width() || a.standardizer.means().size() != names.size()) {
    throw DimensionError("model input width, feature list and statistics disagree");
  }

  Json layers = Json::array();
  for (const auto& layer : a.model.layers) {
    layers.push_back(Json{{"in", layer.in()},
                          {"out", layer.out()},
                          {"weights", layer.weights.data()},
                          {"biases", layer.biases}});
  }
  Json j;
  j["format"] = kModelFormat;
  j["version"] = kModelFormatVersion;
  j["schema"] = Json{{"layout", a.schema.layout == data::Layout::Station ? "station" : "grid"},
                     {"derived_features", a.schema.derived_features},
                     {"custom_columns", a.schema.custom_columns}};
  j["features"] = names;
  j["standardization"] = Json{{"means", a.standardizer.means()}, {"scales", a.standardizer.scales()}};
  j["train_config"] = config_to_json(a.config);
  j["network"] = Json{{"activation", "leaky_relu"},
                      {"leaky_slope", nn::kLeakySlope},
                      {"dropout", a.model.dropout},
                      {"l1", a.model.l1},
                      {"l2", a.model.l2},
                      {"layers", layers}};
  return j.dump(1) + "\n";
}

ModelArtifact deserialize(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("model artifact is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kModelFormat) {
    throw SchemaError("not a gustuq model artifact");
  }
  if (j.value("version", -1) != kModelFormatVersion) {
    throw SchemaError("unsupported model artifact version " + j.value("version", Json(nullptr)).dump());
  }
  try {
    ModelArtifact a;
    const auto& s = j.at("schema");
    const data::Layout layout = s.at("layout").get<std::string>() == "grid" ? data::Layout::Grid
                                                                           : data::Layout::Station;
    if (s.at("derived_features").get<bool>()) {
      a.schema = layout == data::Layout::Grid ? data::Schema::grid() : data::Schema::station();
    } else {
      a.schema = data::Schema::custom(layout, s.at("custom_columns").get<std::vector<std::string>>());
    }
    if (j.at("features").get<std::vector<std::string>>() != a.schema.feature_names()) {
      throw SchemaError("feature list does not match the stored schema");
    }
    a.standardizer = data::Standardizer(j.at("standardization").at("means").get<std::vector<double>>(),
                                        j.at("standardization").at("scales").get<std::vector<double>>());
    a.config = config_from_json(j.at("train_config"));

    const auto& net = j.at("network");
    a.model.dropout = net.at("dropout").get<double>();
    a.model.l1 = net.at("l1").get<double>();
    a.model.l2 = net.at("l2").get<double>();
    for (const auto& lj : net.at("layers")) {
      const auto in = lj.at("in").get<std::size_t>();
      const auto out = lj.at("out").get<std::size_t>();
      nn::DenseLayer layer{Matrix(out, in), lj.at("biases").get<std::vector<double>>()};
      auto w = lj.at("weights").get<std::vector<double>>();
      if (w.size() != in * out || layer.biases.size() != out) {
        throw SchemaError("layer " + std::to_string(a.model.layers.size()) + " has inconsistent shapes");
      }
      layer.weights.data() = std::move(w);
      a.model.layers.push_back(std::move(layer));
    }
    a.model.validate();
    if (a.model.input_width() != a.schema.feature_names().size() ||
        a.standardizer.means().size() != a.model.input_width()) {
      throw SchemaError("network input width does not match the feature list");
    }
    return a;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed model artifact: ") + e.what());
  } catch (const DimensionError& e) {
    throw SchemaError(std::string("malformed model artifact: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ModelArtifact& artifact) {
  write_file_atomic(path, serialize(artifact));
}

ModelArtifact load_model(const std::filesystem::path& path) { return deserialize(read_file(path)); }

void check_schema(const data::Schema& expected, const data::Schema& actual) {
  const auto want = expected.feature_names();
  const auto got = actual.feature_names();
  if (want == got) return;
  std::string missing, extra;
  for (const auto& f : want) {
    if (std::find(got.begin(), got.end(), f) == got.end()) missing += (missing.empty() ? "" : ",") + f;
  }
  for (const auto& f : got) {
    if (std::find(want.begin(), want.end(), f) == want.end()) extra += (extra.empty() ? "" : ",") + f;
  }
  std::string msg = "feature schema does not match the model";
  msg += "; missing: [" + missing + "]; unexpected: [" + extra + "]";
  if (missing.empty() && extra.empty()) msg += "; same features in a different order";
  throw SchemaError(msg);
}

}  // namespace gustuq::io
