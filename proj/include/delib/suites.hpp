#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "delib/data.hpp"
#include "delib/gradcheck.hpp"
#include "delib/model.hpp"

namespace delib::suites {

struct CheckResult {
  std::string name;
  GradCheckReport report;
};

/// Finite-difference checks of every differentiable op on random shapes
/// of rank 1 to 3 with extents up to 4x5x6. Each op output is reduced
/// with random weights so that no gradient vanishes identically.
std::vector<CheckResult> op_gradcheck_suite(std::uint64_t seed, std::size_t trials_per_op = 3);

/// d_model 8, 2 heads, d_ff 16, one layer of every stack, V = 11.
model::ModelConfig tiny_config(model::Variant variant);

/// Random example over ids [4, vocab) with `turns` context utterances.
data::TrainingExample random_example(std::mt19937_64& rng, std::size_t vocab, std::size_t turns);

/// Options used for whole-model checks (see the floor comment in suites.cpp).
GradCheckOptions model_gradcheck_options();

/// Loss of a random two-turn example against every parameter of the tiny
/// model, one result per variant. The ITE+DD draft is held fixed.
std::vector<CheckResult> model_gradcheck_suite(std::uint64_t seed);

}  // namespace delib::suites
