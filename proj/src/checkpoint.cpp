#include "delib/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>

#include "delib/config.hpp"

namespace delib::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void append_le(std::string& out, std::span<const double> values) {
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
}

void read_le(const std::string& blob, std::size_t offset, std::span<double> out) {
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[offset + 8 * i + b])) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
}

void write_atomic(const fs::path& target, const std::string& bytes) {
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

void save(const fs::path& dir, const model::Model& model, const data::Vocab& vocab,
          const train::TrainConfig& train_config, const train::Adam* adam) {
  fs::create_directories(dir);
  std::string blob;
  ordered_json tensors = ordered_json::array();
  for (const auto& [path, t] : model.params().all()) {
    tensors.push_back({{"path", path}, {"shape", t.shape()}, {"offset", blob.size()}});
    append_le(blob, t.data());
  }

  ordered_json opt;
  if (adam) {
    opt["step"] = adam->t();
    opt["learning_rate"] = adam->options().learning_rate;
    opt["beta1"] = adam->options().beta1;
    opt["beta2"] = adam->options().beta2;
    opt["epsilon"] = adam->options().epsilon;
    ordered_json moments = ordered_json::array();
    for (const auto& [path, m] : adam->moments()) {
      ordered_json entry{{"path", path}, {"size", m.m.size()}, {"m_offset", blob.size()}};
      append_le(blob, m.m);
      entry["v_offset"] = blob.size();
      append_le(blob, m.v);
      moments.push_back(std::move(entry));
    }
    opt["moments"] = std::move(moments);
  }

  ordered_json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["model_config"] = config::to_json(model.config());
  manifest["train_config"] = config::to_json(train_config);
  manifest["vocab"] = vocab.tokens();
  manifest["blob"] = {{"file", kBlobName}, {"bytes", blob.size()}, {"dtype", "float64-le"}};
  manifest["tensors"] = std::move(tensors);
  if (adam) manifest["adam"] = std::move(opt);

  write_atomic(dir / kBlobName, blob);
  write_atomic(dir / kManifestName, manifest.dump(2) + "\n");
}

Loaded load(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw CheckpointError(manifest_path.string() + ": " + e.what());
  }
  const std::string blob = read_file(dir / kBlobName);
  const std::string where = dir.string() + ": ";

  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw CheckpointError(where + "format_version " + std::to_string(version) + ", expected " +
                            std::to_string(kFormatVersion));
    }
    if (manifest.at("blob").at("bytes").get<std::size_t>() != blob.size()) {
      throw CheckpointError(where + "blob holds " + std::to_string(blob.size()) + " bytes, manifest says " +
                            manifest.at("blob").at("bytes").dump());
    }

    Loaded out;
    const model::ModelConfig mc = config::model_config_from_json(manifest.at("model_config"));
    out.train_config = config::train_config_from_json(manifest.at("train_config"));
    out.vocab = data::Vocab::from_tokens(manifest.at("vocab").get<std::vector<std::string>>());
    if (out.vocab.size() != mc.vocab_size) {
      throw CheckpointError(where + "vocabulary has " + std::to_string(out.vocab.size()) +
                            " tokens, model expects " + std::to_string(mc.vocab_size));
    }
    out.model = std::make_unique<model::Model>(mc, 0);

    auto& params = out.model->params();
    std::size_t loaded = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const std::string path = entry.at("path").get<std::string>();
      if (!params.contains(path)) throw CheckpointError(where + "unexpected tensor " + path);
      Tensor t = params.get(path);
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != t.shape()) {
        throw CheckpointError(where + "tensor " + path + " has shape " + shape_str(shape) + ", model expects " +
                              shape_str(t.shape()));
      }
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      if (offset + 8 * t.numel() > blob.size()) throw CheckpointError(where + "tensor " + path + " runs past the blob");
      read_le(blob, offset, t.mutable_data());
      ++loaded;
    }
    if (loaded != params.all().size()) {
      for (const auto& [path, _] : params.all()) {
        bool found = false;
        for (const auto& entry : manifest.at("tensors")) found = found || entry.at("path") == path;
        if (!found) throw CheckpointError(where + "missing tensor " + path);
      }
    }

    if (manifest.contains("adam")) {
      const auto& a = manifest.at("adam");
      train::AdamOptions opts{a.at("learning_rate").get<double>(), a.at("beta1").get<double>(),
                              a.at("beta2").get<double>(), a.at("epsilon").get<double>()};
      out.adam = train::Adam(opts);
      std::map<std::string, train::Moments> moments;
      for (const auto& entry : a.at("moments")) {
        const std::string path = entry.at("path").get<std::string>();
        const std::size_t n = entry.at("size").get<std::size_t>();
        if (!params.contains(path) || params.get(path).numel() != n)
          throw CheckpointError(where + "optimizer state for " + path + " does not match the model");
        const std::size_t mo = entry.at("m_offset").get<std::size_t>(), vo = entry.at("v_offset").get<std::size_t>();
        if (mo + 8 * n > blob.size() || vo + 8 * n > blob.size())
          throw CheckpointError(where + "optimizer state for " + path + " runs past the blob");
        train::Moments m{std::vector<double>(n), std::vector<double>(n)};
        read_le(blob, mo, m.m);
        read_le(blob, vo, m.v);
        moments.emplace(path, std::move(m));
      }
      out.adam.restore(a.at("step").get<std::size_t>(), std::move(moments));
    } else {
      out.adam = train::Adam({out.train_config.learning_rate, out.train_config.beta1, out.train_config.beta2,
                              out.train_config.epsilon});
    }
    return out;
  } catch (const json::exception& e) {
    throw CheckpointError(where + "malformed manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(where + "invalid configuration: " + e.what());
  }
}

}  // namespace delib::checkpoint
