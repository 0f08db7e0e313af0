#include "convqa/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "convqa/errors.hpp"
#include "convqa/fingerprint.hpp"

namespace convqa {

using json = nlohmann::ordered_json;

namespace {

json tensors_json(const ModelParams& p) {
  json j;
  for_each_tensor(p, [&](std::string_view name, std::span<const double> t) {
    j[std::string(name)] = std::vector<double>(t.begin(), t.end());
  });
  return j;
}

void read_tensors(const json& j, ModelParams& p) {
  for_each_tensor(p, [&](std::string_view name, std::span<double> t) {
    const std::string key(name);
    if (!j.contains(key)) throw InputError("checkpoint is missing tensor " + key);
    const auto values = j.at(key).get<std::vector<double>>();
    if (values.size() != t.size()) {
      throw InputError("checkpoint tensor " + key + " has " +
                       std::to_string(values.size()) + " values, expected " +
                       std::to_string(t.size()));
    }
    std::copy(values.begin(), values.end(), t.begin());
  });
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  const auto& d = ckpt.params.dims;
  json j;
  j["format"] = "convqa-checkpoint";
  j["version"] = kCheckpointVersion;
  j["regime"] = ckpt.regime;
  j["epoch"] = ckpt.epoch;
  j["init_seed"] = ckpt.init_seed;
  j["dims"] = {{"vocab_size", d.vocab_size},
               {"embed_dim", d.embed_dim},
               {"hidden_dim", d.hidden_dim},
               {"max_span_len", d.max_span_len}};
  j["vocab"] = ckpt.vocab.tokens();
  j["vocab_fingerprint"] = vocab_fingerprint(ckpt.vocab);
  j["params"] = tensors_json(ckpt.params);
  j["optimizer"] = {{"step", ckpt.optimizer.step},
                    {"m", tensors_json(ckpt.optimizer.m)},
                    {"v", tensors_json(ckpt.optimizer.v)}};
  return j.dump() + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("malformed checkpoint: ") + e.what(), e.byte);
  }
  try {
    if (j.value("format", "") != "convqa-checkpoint") {
      throw InputError("not a convqa checkpoint");
    }
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw InputError("unsupported checkpoint version " +
                       std::to_string(j.at("version").get<int>()));
    }
    Checkpoint c;
    ModelDims dims;
    dims.vocab_size = j.at("dims").at("vocab_size").get<int>();
    dims.embed_dim = j.at("dims").at("embed_dim").get<int>();
    dims.hidden_dim = j.at("dims").at("hidden_dim").get<int>();
    dims.max_span_len = j.at("dims").at("max_span_len").get<int>();
    c.vocab = Vocab::from_tokens(j.at("vocab").get<std::vector<std::string>>());
    if (c.vocab.size() != dims.vocab_size) {
      throw InputError("checkpoint vocabulary has " + std::to_string(c.vocab.size()) +
                       " entries but the embedding has " +
                       std::to_string(dims.vocab_size) + " rows");
    }
    if (vocab_fingerprint(c.vocab) != j.at("vocab_fingerprint").get<std::string>()) {
      throw InputError("checkpoint vocabulary fingerprint mismatch");
    }
    c.regime = j.value("regime", "");
    c.epoch = j.at("epoch").get<int>();
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.params = zeros_like(dims);
    read_tensors(j.at("params"), c.params);
    c.optimizer = AdamState::for_dims(dims);
    c.optimizer.step = j.at("optimizer").at("step").get<long>();
    read_tensors(j.at("optimizer").at("m"), c.optimizer.m);
    read_tensors(j.at("optimizer").at("v"), c.optimizer.v);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("invalid checkpoint: ") + e.what());
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_to_json(ckpt);
  if (!out) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace convqa
