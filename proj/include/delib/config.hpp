#pragma once

#include <iosfwd>
#include <string>

#include <json.hpp>

#include "delib/eval.hpp"
#include "delib/model.hpp"
#include "delib/train.hpp"

namespace delib::config {

/// Everything a run file can set.
struct RunConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  eval::DecodeConfig decode;
};

/// Flat "key = value" text; '#' starts a comment, blank lines are ignored.
/// Keys are the field names of ModelConfig (except vocab_size, which comes
/// from the data), TrainConfig and DecodeConfig, plus `variant`. Unknown
/// keys, repeated keys and malformed values raise ConfigError with the
/// line number.
RunConfig parse(std::istream& in);
RunConfig load(const std::string& path);
std::string to_text(const RunConfig& config);

nlohmann::ordered_json to_json(const model::ModelConfig& c);
model::ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const train::TrainConfig& c);
train::TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace delib::config
