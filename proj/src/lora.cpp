#include "garden/lora.hpp"

#include <regex>

#include "binary_io.hpp"

namespace garden {

namespace {

constexpr char kAdapterMagic[8] = {'G', 'L', 'O', 'R', 'A', 0, 0, 0};
constexpr std::uint32_t kAdapterVersion = 1;

template <typename T>
std::shared_ptr<LoraAdapter<T>> attach_adapter(Registry<T>& registry, const std::string& target, std::size_t rank,
                                               double alpha, Tensor<T> a, Tensor<T> b) {
  auto it = registry.linears.find(target);
  if (it == registry.linears.end()) {
    throw ConfigError("LoRA target " + target + " is not a projection weight");
  }
  Linear<T>& layer = *it->second;
  if (layer.adapter()) throw StateError("LoRA target " + target + " already has an adapter");
  const std::size_t d_in = layer.in_features(), d_out = layer.out_features();
  if (rank == 0 || rank > std::min(d_in, d_out)) {
    throw ConfigError("LoRA rank " + std::to_string(rank) + " invalid for " + target + " [" + std::to_string(d_out) +
                      "x" + std::to_string(d_in) + "]");
  }
  if (!(alpha > 0.0)) throw ConfigError("LoRA alpha must be positive");
  if (a.shape() != Shape{rank, d_in} || b.shape() != Shape{d_out, rank}) {
    throw DimensionError("LoRA factors for " + target + " have shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  auto adapter = std::make_shared<LoraAdapter<T>>();
  adapter->target_name = target;
  adapter->rank = rank;
  adapter->alpha = alpha;
  adapter->a = registry.params.add(adapter->a_name(), std::move(a));
  adapter->b = registry.params.add(adapter->b_name(), std::move(b));
  layer.attach(adapter);
  return adapter;
}

/// Everything except the adapter factors becomes frozen.
template <typename T>
LoraState<T> finish_injection(Registry<T>& registry, std::vector<std::shared_ptr<LoraAdapter<T>>> adapters) {
  LoraState<T> state;
  state.adapters = std::move(adapters);
  for (const auto& ad : state.adapters) {
    state.trainable_names.insert(ad->a_name());
    state.trainable_names.insert(ad->b_name());
  }
  for (auto& p : registry.params.all()) {
    const bool train = state.trainable_names.count(p.name) != 0;
    registry.params.set_trainable(p.name, train);
    if (!train) state.frozen_names.insert(p.name);
  }
  return state;
}

/// (alpha / r) B A as a d_out x d_in tensor, accumulated in double.
template <typename T>
std::vector<T> delta_weight(const LoraAdapter<T>& ad) {
  const std::size_t r = ad.rank, d_in = ad.d_in(), d_out = ad.d_out();
  const auto& a = ad.a.value();
  const auto& b = ad.b.value();
  const double s = ad.alpha / static_cast<double>(r);
  std::vector<T> out(d_out * d_in);
  for (std::size_t i = 0; i < d_out; ++i)
    for (std::size_t j = 0; j < d_in; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < r; ++p) acc += static_cast<double>(b[i * r + p]) * static_cast<double>(a[p * d_in + j]);
      out[i * d_in + j] = static_cast<T>(s * acc);
    }
  return out;
}

}  // namespace

std::vector<std::string> default_lora_targets() {
  return {R"(unet\..*\.attn\.(self|cross)\.q\.weight)", R"(unet\..*\.attn\.(self|cross)\.k\.weight)",
          R"(unet\..*\.attn\.(self|cross)\.v\.weight)", R"(unet\..*\.attn\.(self|cross)\.out\.weight)"};
}

template <typename T>
LoraState<T> inject(Registry<T>& registry, const std::vector<std::string>& patterns, std::size_t rank, double alpha,
                    Rng& rng) {
  std::vector<std::string> targets;
  for (const auto& pattern : patterns) {
    std::regex re;
    try {
      re = std::regex(pattern);
    } catch (const std::regex_error& e) {
      throw ConfigError("invalid LoRA target pattern '" + pattern + "': " + e.what());
    }
    std::size_t hits = 0;
    for (const auto& p : registry.params.all()) {
      if (!std::regex_match(p.name, re)) continue;
      ++hits;
      if (p.var.shape().size() != 2 || registry.linears.count(p.name) == 0) {
        throw ConfigError("LoRA pattern '" + pattern + "' matches " + p.name + " " + shape_str(p.var.shape()) +
                          ", which is not a projection matrix");
      }
      if (std::find(targets.begin(), targets.end(), p.name) == targets.end()) targets.push_back(p.name);
    }
    if (hits == 0) throw ConfigError("LoRA pattern '" + pattern + "' matches no parameter");
  }
  for (const auto& t : targets) {
    if (registry.linears.at(t)->adapter()) throw StateError("LoRA target " + t + " already has an adapter");
  }
  std::vector<std::shared_ptr<LoraAdapter<T>>> adapters;
  for (const auto& t : targets) {
    const Linear<T>& layer = *registry.linears.at(t);
    const std::size_t d_in = layer.in_features(), d_out = layer.out_features();
    Tensor<T> a({rank, d_in}, rng.normal_vector<T>(rank * d_in, 0.02));
    adapters.push_back(attach_adapter(registry, t, rank, alpha, std::move(a), Tensor<T>({d_out, rank})));
  }
  return finish_injection(registry, std::move(adapters));
}

template <typename T>
TrainableReport trainable_report(const Registry<T>& registry, const LoraState<T>& state) {
  TrainableReport r;
  for (const auto& p : registry.params.all()) {
    if (state.trainable_names.count(p.name)) {
      r.theta_count += p.var.size();
    } else {
      r.phi0_count += p.var.size();
    }
  }
  r.ratio = r.phi0_count ? static_cast<double>(r.theta_count) / static_cast<double>(r.phi0_count) : 0.0;
  return r;
}

template <typename T>
void merge(LoraState<T>& state, Registry<T>& registry) {
  if (state.merged) throw StateError("LoRA adapters are already merged");
  for (auto& ad : state.adapters) {
    auto& w = registry.linears.at(ad->target_name)->weight().mutable_value().vec();
    const auto delta = delta_weight(*ad);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += delta[i];
    ad->merged = true;
  }
  state.merged = true;
}

template <typename T>
void unmerge(LoraState<T>& state, Registry<T>& registry) {
  if (!state.merged) throw StateError("LoRA adapters are not merged");
  for (auto& ad : state.adapters) {
    auto& w = registry.linears.at(ad->target_name)->weight().mutable_value().vec();
    const auto delta = delta_weight(*ad);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= delta[i];
    ad->merged = false;
  }
  state.merged = false;
}

template <typename T>
std::map<std::string, std::uint64_t> frozen_checksums(const Registry<T>& registry, const LoraState<T>& state) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& name : state.frozen_names) out[name] = tensor_checksum(registry.params.get(name).var.value());
  return out;
}

template <typename T>
void verify_frozen(const Registry<T>& registry, const LoraState<T>& state,
                   const std::map<std::string, std::uint64_t>& before) {
  for (const auto& [name, sum] : frozen_checksums(registry, state)) {
    auto it = before.find(name);
    if (it == before.end() || it->second != sum) throw StateError("frozen parameter changed: " + name);
  }
}

void save_adapters(const std::filesystem::path& path, const LoraState<float>& state) {
  detail::ByteWriter w;
  w.bytes(kAdapterMagic, sizeof kAdapterMagic);
  w.u32(kAdapterVersion);
  w.u32(static_cast<std::uint32_t>(state.adapters.size()));
  for (const auto& ad : state.adapters) {
    w.u32(static_cast<std::uint32_t>(ad->target_name.size()));
    w.str(ad->target_name);
    w.u32(static_cast<std::uint32_t>(ad->rank));
    w.f32(static_cast<float>(ad->alpha));
    w.u32(static_cast<std::uint32_t>(ad->d_in()));
    w.u32(static_cast<std::uint32_t>(ad->d_out()));
    w.floats(ad->a.value().vec());
    w.floats(ad->b.value().vec());
  }
  detail::write_binary_file(path.string(), w.buffer());
}

std::vector<AdapterRecord> load_adapter_file(const std::filesystem::path& path) {
  const std::string data = detail::read_binary_file(path.string());
  detail::ByteReader r(data, path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kAdapterMagic, sizeof magic) != 0) throw CorruptionError(path.string() + ": not an adapter file (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kAdapterVersion) {
    throw VersionError(path.string() + ": adapter format version " + std::to_string(version) + " unsupported (expected " +
                     std::to_string(kAdapterVersion) + ")");
  }
  const std::uint32_t count = r.u32();
  std::vector<AdapterRecord> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    AdapterRecord rec;
    rec.target_name = r.str(r.u32());
    rec.rank = r.u32();
    rec.alpha = r.f32();
    rec.d_in = r.u32();
    rec.d_out = r.u32();
    rec.a = r.floats(rec.rank * rec.d_in);
    rec.b = r.floats(rec.d_out * rec.rank);
    out.push_back(std::move(rec));
  }
  if (!r.at_end()) throw CorruptionError(path.string() + ": trailing bytes at offset " + std::to_string(r.offset()));
  return out;
}

LoraState<float> apply_adapters(Registry<float>& registry, const std::vector<AdapterRecord>& records) {
  std::vector<std::shared_ptr<LoraAdapter<float>>> adapters;
  for (const auto& rec : records) {
    adapters.push_back(attach_adapter(registry, rec.target_name, rec.rank, rec.alpha,
                                      Tensor<float>({rec.rank, rec.d_in}, rec.a),
                                      Tensor<float>({rec.d_out, rec.rank}, rec.b)));
  }
  return finish_injection(registry, std::move(adapters));
}

#define GARDEN_INSTANTIATE(T)                                                                                    \
  template LoraState<T> inject(Registry<T>&, const std::vector<std::string>&, std::size_t, double, Rng&);      \
  template TrainableReport trainable_report(const Registry<T>&, const LoraState<T>&);                          \
  template void merge(LoraState<T>&, Registry<T>&);                                                            \
  template void unmerge(LoraState<T>&, Registry<T>&);                                                          \
  template std::map<std::string, std::uint64_t> frozen_checksums(const Registry<T>&, const LoraState<T>&);     \
  template void verify_frozen(const Registry<T>&, const LoraState<T>&, const std::map<std::string, std::uint64_t>&);

GARDEN_INSTANTIATE(float)
GARDEN_INSTANTIATE(double)

}  // namespace garden
