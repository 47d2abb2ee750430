#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gustuq/data.hpp"
#include "gustuq/evidential.hpp"
#include "gustuq/nncore.hpp"

namespace gustuq::io {

inline constexpr const char* kModelFormat = "gustuq-model";
inline constexpr int kModelFormatVersion = 1;

/// Everything needed to reproduce predictions: weights, the training-split
/// feature statistics, the schema and the training configuration.
struct ModelArtifact {
  nn::MLPModel model;
  data::Standardizer standardizer;
  data::Schema schema;
  evidential::TrainConfig config;

  std::vector<std::string> feature_names() const { return schema.feature_names(); }
};

/// Structured text (JSON). Doubles are written in shortest round-trip form,
/// so serialize(deserialize(s)) == s and weights survive bit-exactly.
std::string serialize(const ModelArtifact& artifact);
/// Throws SchemaError on an unknown format, version or inconsistent shapes.
ModelArtifact deserialize(const std::string& text);

void save_model(const std::filesystem::path& path, const ModelArtifact& artifact);
ModelArtifact load_model(const std::filesystem::path& path);

/// Throws SchemaError listing the missing and unexpected features when the
/// two schemas do not produce the same model inputs.
void check_schema(const data::Schema& expected, const data::Schema& actual);

}  // namespace gustuq::io
