#pragma once

#include <filesystem>
#include <memory>

#include "delib/data.hpp"
#include "delib/model.hpp"
#include "delib/train.hpp"

namespace delib::checkpoint {

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "params.bin";

struct CheckpointError : DataError {
  using DataError::DataError;
};

/// Writes DIR/manifest.json and DIR/params.bin (little-endian doubles:
/// parameters in path order, then Adam first and second moments). Each
/// file is written to a temporary name and renamed into place.
void save(const std::filesystem::path& dir, const model::Model& model, const data::Vocab& vocab,
          const train::TrainConfig& train_config, const train::Adam* adam = nullptr);

struct Loaded {
  std::unique_ptr<model::Model> model;
  data::Vocab vocab;
  train::TrainConfig train_config;
  train::Adam adam;
};

/// Rebuilds the model from the stored config and overwrites every
/// parameter. Throws CheckpointError on a version mismatch, a missing or
/// extra tensor, a shape mismatch or a truncated blob.
Loaded load(const std::filesystem::path& dir);

}  // namespace delib::checkpoint
