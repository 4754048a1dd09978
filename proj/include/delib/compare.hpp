#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "delib/config.hpp"
#include "delib/eval.hpp"
#include "delib/train.hpp"

namespace delib::compare {

struct Options {
  std::vector<model::Variant> variants{model::Variant::kIteDd, model::Variant::kIteCkad, model::Variant::kKat};
  std::vector<std::uint64_t> seeds{1};
  bool decode = true;  // BLEU needs beam decoding of the evaluation split
  std::function<void(const std::string&)> log;
};

struct Result {
  std::vector<eval::VariantRow> rows;                 // averaged over seeds
  std::vector<std::vector<eval::VariantRow>> per_seed;  // [seed][variant]
};

/// Trains every variant with the same configuration and seeds on the
/// dataset's training split and scores it on the validation split (the
/// training split when there is none).
Result compare_variants(const train::Dataset& dataset, const config::RunConfig& base, const Options& options);

}  // namespace delib::compare
