#include "garden/checkpoint.hpp"

#include <cstring>

#include "binary_io.hpp"

namespace garden {

namespace {

constexpr char kMagic[8] = {'G', 'R', 'D', 'N', 'C', 'K', 'P', 'T'};

using nlohmann::json;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t vocab_hash(const std::vector<std::string>& tokens) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& t : tokens) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  }
  return h;
}

void add_table(json& table, const std::vector<NamedTensor>& tensors, const char* section, std::uint64_t& offset) {
  for (const auto& t : tensors) {
    if (shape_numel(t.shape) != t.data.size()) {
      throw DimensionError("checkpoint tensor " + t.name + " has " + std::to_string(t.data.size()) +
                           " values for shape " + shape_str(t.shape));
    }
    table.push_back({{"section", section}, {"name", t.name}, {"shape", t.shape}, {"offset", offset}});
    offset += t.data.size();
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  json header;
  header["stage"] = c.stage;
  header["step"] = c.step;
  header["config"] = c.config;
  header["vocab"] = c.vocab;
  header["vocab_hash"] = hex64(vocab_hash(c.vocab));
  header["latent_scale"] = c.latent_scale;
  header["rng_state"] = c.rng_state;
  json adapters = json::array();
  for (const auto& a : c.adapters) adapters.push_back({{"target", a.target}, {"rank", a.rank}, {"alpha", a.alpha}});
  header["adapters"] = adapters;
  header["trainable"] = c.trainable;
  header["adam"] = {{"lr", c.adam_config.lr},
                    {"beta1", c.adam_config.beta1},
                    {"beta2", c.adam_config.beta2},
                    {"epsilon", c.adam_config.epsilon},
                    {"steps", c.adam_steps}};
  json table = json::array();
  std::uint64_t offset = 0;
  add_table(table, c.params, "param", offset);
  add_table(table, c.adam_m, "adam_m", offset);
  add_table(table, c.adam_v, "adam_v", offset);
  header["tensors"] = table;
  header["payload_floats"] = offset;
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(text.size());
  w.str(text);
  for (const auto* group : {&c.params, &c.adam_m, &c.adam_v})
    for (const auto& t : *group) w.floats(t.data);
  return w.buffer();
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& what) {
  detail::ByteReader r(bytes, what);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw CorruptionError(what + ": bad magic at offset 0");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(what + ": checkpoint format version " + std::to_string(version) + ", this build reads " +
                       std::to_string(kCheckpointVersion));
  }
  const std::uint64_t header_len = r.u64();
  const std::size_t header_at = r.offset();
  const std::string text = r.str(header_len);
  json h;
  Checkpoint c;
  try {
    h = json::parse(text);
    c.stage = h.at("stage").get<std::string>();
    c.step = h.at("step").get<std::uint64_t>();
    c.config = h.at("config");
    c.vocab = h.at("vocab").get<std::vector<std::string>>();
    if (h.at("vocab_hash").get<std::string>() != hex64(vocab_hash(c.vocab))) {
      throw CorruptionError(what + ": vocabulary hash mismatch in header at offset " + std::to_string(header_at));
    }
    c.latent_scale = h.at("latent_scale").get<double>();
    c.rng_state = h.at("rng_state").get<std::string>();
    for (const auto& a : h.at("adapters")) {
      c.adapters.push_back({a.at("target").get<std::string>(), a.at("rank").get<std::size_t>(), a.at("alpha").get<double>()});
    }
    c.trainable = h.at("trainable").get<std::vector<std::string>>();
    const auto& adam = h.at("adam");
    c.adam_config = {adam.at("lr").get<double>(), adam.at("beta1").get<double>(), adam.at("beta2").get<double>(),
                     adam.at("epsilon").get<double>()};
    c.adam_steps = adam.at("steps").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CorruptionError(what + ": malformed header at offset " + std::to_string(header_at) + ": " + e.what());
  }
  std::uint64_t expected_offset = 0;
  for (const auto& entry : h.at("tensors")) {
    NamedTensor t;
    std::string section;
    std::uint64_t offset = 0;
    try {
      section = entry.at("section").get<std::string>();
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<Shape>();
      offset = entry.at("offset").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw CorruptionError(what + ": malformed tensor table: " + e.what());
    }
    if (offset != expected_offset) {
      throw CorruptionError(what + ": tensor " + t.name + " offset " + std::to_string(offset) + " out of sequence");
    }
    t.data = r.floats(shape_numel(t.shape));
    expected_offset += t.data.size();
    if (section == "param") {
      c.params.push_back(std::move(t));
    } else if (section == "adam_m") {
      c.adam_m.push_back(std::move(t));
    } else if (section == "adam_v") {
      c.adam_v.push_back(std::move(t));
    } else {
      throw CorruptionError(what + ": unknown tensor section '" + section + "'");
    }
  }
  if (!r.at_end()) throw CorruptionError(what + ": trailing bytes at offset " + std::to_string(r.offset()));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  detail::write_binary_file(path.string(), serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(detail::read_binary_file(path.string()), path.string());
}

void capture_parameters(const ParameterSet<float>& params, const AdamState<float>& adam, Checkpoint& c) {
  c.params.clear();
  c.trainable.clear();
  c.adam_m.clear();
  c.adam_v.clear();
  for (const auto& p : params.all()) {
    c.params.push_back({p.name, p.var.shape(), p.var.value().vec()});
    if (p.trainable) c.trainable.push_back(p.name);
  }
  c.adam_config = adam.config;
  c.adam_steps = adam.step_count;
  for (const auto& [name, m] : adam.m) c.adam_m.push_back({name, {m.size()}, m});
  for (const auto& [name, v] : adam.v) c.adam_v.push_back({name, {v.size()}, v});
}

void restore_parameters(const Checkpoint& c, ParameterSet<float>& params, AdamState<float>& adam) {
  if (c.params.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(c.params.size()) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (const auto& t : c.params) {
    if (!params.contains(t.name)) throw ConfigError("checkpoint parameter " + t.name + " is not in the model");
    auto& p = params.get(t.name);
    if (p.var.shape() != t.shape) {
      throw ConfigError("checkpoint parameter " + t.name + " has shape " + shape_str(t.shape) + ", model expects " +
                        shape_str(p.var.shape()));
    }
  }
  for (const auto& t : c.params) params.get(t.name).var.mutable_value().vec() = t.data;
  for (auto& p : params.all()) params.set_trainable(p.name, false);
  for (const auto& name : c.trainable) params.set_trainable(name, true);
  adam = AdamState<float>{};
  adam.config = c.adam_config;
  adam.step_count = c.adam_steps;
  for (const auto& t : c.adam_m) adam.m[t.name] = t.data;
  for (const auto& t : c.adam_v) adam.v[t.name] = t.data;
}

}  // namespace garden
