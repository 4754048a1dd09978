#include "delib/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace delib::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& v) {
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw ConfigError("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"variant", [](RunConfig& c, const std::string& v) { c.model.variant = model::parse_variant(v); }},
      {"d_model", [](RunConfig& c, const std::string& v) { c.model.d_model = to_size(v); }},
      {"heads", [](RunConfig& c, const std::string& v) { c.model.heads = to_size(v); }},
      {"d_ff", [](RunConfig& c, const std::string& v) { c.model.d_ff = to_size(v); }},
      {"sa_layers", [](RunConfig& c, const std::string& v) { c.model.sa_layers = to_size(v); }},
      {"ite_layers", [](RunConfig& c, const std::string& v) { c.model.ite_layers = to_size(v); }},
      {"dec_layers", [](RunConfig& c, const std::string& v) { c.model.dec_layers = to_size(v); }},
      {"window", [](RunConfig& c, const std::string& v) { c.model.window = to_size(v); }},
      {"dropout", [](RunConfig& c, const std::string& v) { c.model.dropout = to_double(v); }},
      {"max_doc_len", [](RunConfig& c, const std::string& v) { c.model.max_doc_len = to_size(v); }},
      {"tie_output", [](RunConfig& c, const std::string& v) { c.model.tie_output = to_bool(v); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_size(v); }},
      {"max_steps", [](RunConfig& c, const std::string& v) { c.train.max_steps = to_size(v); }},
      {"learning_rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = to_double(v); }},
      {"beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = to_double(v); }},
      {"beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = to_double(v); }},
      {"epsilon", [](RunConfig& c, const std::string& v) { c.train.epsilon = to_double(v); }},
      {"clip_norm", [](RunConfig& c, const std::string& v) { c.train.clip_norm = to_double(v); }},
      {"eval_interval", [](RunConfig& c, const std::string& v) { c.train.eval_interval = to_size(v); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.train.seed = to_size(v); }},
      {"checkpoint_dir", [](RunConfig& c, const std::string& v) { c.train.checkpoint_dir = v; }},
      {"val_fraction", [](RunConfig& c, const std::string& v) { c.train.val_fraction = to_double(v); }},
      {"min_count", [](RunConfig& c, const std::string& v) { c.train.min_count = to_size(v); }},
      {"max_vocab", [](RunConfig& c, const std::string& v) { c.train.max_vocab = to_size(v); }},
      {"utterance_cap", [](RunConfig& c, const std::string& v) { c.train.utterance_cap = to_size(v); }},
      {"beam_size", [](RunConfig& c, const std::string& v) { c.decode.beam_size = to_size(v); }},
      {"max_decode_len", [](RunConfig& c, const std::string& v) { c.decode.max_len = to_size(v); }},
  };
  return table;
}

}  // namespace

RunConfig parse(std::istream& in) {
  RunConfig c;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "config line " + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "repeated key '" + key + "'");
    try {
      it->second(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  c.train.validate();
  if (c.decode.beam_size == 0 || c.decode.max_len == 0)
    throw ConfigError("beam_size and max_decode_len must be positive");
  return c;
}

RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse(in);
}

std::string to_text(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "variant = " << model::to_string(c.model.variant) << '\n'
      << "d_model = " << c.model.d_model << '\n'
      << "heads = " << c.model.heads << '\n'
      << "d_ff = " << c.model.d_ff << '\n'
      << "sa_layers = " << c.model.sa_layers << '\n'
      << "ite_layers = " << c.model.ite_layers << '\n'
      << "dec_layers = " << c.model.dec_layers << '\n'
      << "window = " << c.model.window << '\n'
      << "dropout = " << c.model.dropout << '\n'
      << "max_doc_len = " << c.model.max_doc_len << '\n'
      << "tie_output = " << (c.model.tie_output ? "true" : "false") << '\n'
      << "batch_size = " << c.train.batch_size << '\n'
      << "max_steps = " << c.train.max_steps << '\n'
      << "learning_rate = " << c.train.learning_rate << '\n'
      << "beta1 = " << c.train.beta1 << '\n'
      << "beta2 = " << c.train.beta2 << '\n'
      << "epsilon = " << c.train.epsilon << '\n'
      << "clip_norm = " << c.train.clip_norm << '\n'
      << "eval_interval = " << c.train.eval_interval << '\n'
      << "seed = " << c.train.seed << '\n';
  if (!c.train.checkpoint_dir.empty()) out << "checkpoint_dir = " << c.train.checkpoint_dir << '\n';
  out << "val_fraction = " << c.train.val_fraction << '\n'
      << "min_count = " << c.train.min_count << '\n'
      << "max_vocab = " << c.train.max_vocab << '\n'
      << "utterance_cap = " << c.train.utterance_cap << '\n'
      << "beam_size = " << c.decode.beam_size << '\n'
      << "max_decode_len = " << c.decode.max_len << '\n';
  return out.str();
}

nlohmann::ordered_json to_json(const model::ModelConfig& c) {
  nlohmann::ordered_json j;
  j["variant"] = model::to_string(c.variant);
  j["d_model"] = c.d_model;
  j["heads"] = c.heads;
  j["d_ff"] = c.d_ff;
  j["sa_layers"] = c.sa_layers;
  j["ite_layers"] = c.ite_layers;
  j["dec_layers"] = c.dec_layers;
  j["vocab_size"] = c.vocab_size;
  j["window"] = c.window;
  j["dropout"] = c.dropout;
  j["max_doc_len"] = c.max_doc_len;
  j["tie_output"] = c.tie_output;
  return j;
}

model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  model::ModelConfig c;
  c.variant = model::parse_variant(j.at("variant").get<std::string>());
  c.d_model = j.at("d_model").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.sa_layers = j.at("sa_layers").get<std::size_t>();
  c.ite_layers = j.at("ite_layers").get<std::size_t>();
  c.dec_layers = j.at("dec_layers").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.max_doc_len = j.at("max_doc_len").get<std::size_t>();
  c.tie_output = j.at("tie_output").get<bool>();
  return c;
}

nlohmann::ordered_json to_json(const train::TrainConfig& c) {
  nlohmann::ordered_json j;
  j["batch_size"] = c.batch_size;
  j["max_steps"] = c.max_steps;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["clip_norm"] = c.clip_norm;
  j["eval_interval"] = c.eval_interval;
  j["seed"] = c.seed;
  j["checkpoint_dir"] = c.checkpoint_dir;
  j["val_fraction"] = c.val_fraction;
  j["min_count"] = c.min_count;
  j["max_vocab"] = c.max_vocab;
  j["utterance_cap"] = c.utterance_cap;
  return j;
}

train::TrainConfig train_config_from_json(const nlohmann::json& j) {
  train::TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.eval_interval = j.at("eval_interval").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
  c.val_fraction = j.at("val_fraction").get<double>();
  c.min_count = j.at("min_count").get<std::size_t>();
  c.max_vocab = j.at("max_vocab").get<std::size_t>();
  c.utterance_cap = j.at("utterance_cap").get<std::size_t>();
  return c;
}

}  // namespace delib::config
