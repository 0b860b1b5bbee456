#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "garden/layers.hpp"

namespace garden {

/// Rank-r update for one frozen projection weight W [d_out x d_in]:
/// delta W = (alpha / r) * B * A, with A [r x d_in] and B [d_out x r].
template <typename T>
struct LoraAdapter {
  std::string target_name;
  Var<T> a;
  Var<T> b;
  std::size_t rank = 0;
  double alpha = 0.0;
  bool merged = false;

  T scale() const { return static_cast<T>(alpha / static_cast<double>(rank)); }
  std::size_t d_in() const { return a.shape()[1]; }
  std::size_t d_out() const { return b.shape()[0]; }
  std::string a_name() const { return "lora." + target_name + ".A"; }
  std::string b_name() const { return "lora." + target_name + ".B"; }
};

/// Frozen base (the original parameters) versus trainable adapter factors.
template <typename T>
struct LoraState {
  std::vector<std::shared_ptr<LoraAdapter<T>>> adapters;
  std::set<std::string> frozen_names;
  std::set<std::string> trainable_names;
  bool merged = false;
};

/// Default adapter targets: q, k, v and out projections of every U-Net
/// attention layer (self and cross).
std::vector<std::string> default_lora_targets();

/// Attaches an adapter to every Linear weight whose name fully matches one
/// of the regex `patterns`. A is drawn from N(0, 0.02), B starts at zero.
/// Afterwards only adapter factors are trainable.
///
/// Throws ConfigError when a pattern matches nothing or matches a parameter
/// that is not a projection weight, and StateError when a target already
/// carries an adapter.
template <typename T>
LoraState<T> inject(Registry<T>& registry, const std::vector<std::string>& patterns, std::size_t rank, double alpha,
                    Rng& rng);

struct TrainableReport {
  std::size_t theta_count = 0;
  std::size_t phi0_count = 0;
  double ratio = 0.0;
};

template <typename T>
TrainableReport trainable_report(const Registry<T>& registry, const LoraState<T>& state);

/// W <- W + (alpha/r) B A for every adapter. StateError if already merged.
template <typename T>
void merge(LoraState<T>& state, Registry<T>& registry);
/// Inverse of merge. StateError if not merged.
template <typename T>
void unmerge(LoraState<T>& state, Registry<T>& registry);

/// Checksums of every frozen parameter, keyed by name.
template <typename T>
std::map<std::string, std::uint64_t> frozen_checksums(const Registry<T>& registry, const LoraState<T>& state);

/// Throws StateError naming the first frozen parameter whose checksum
/// differs from `before`.
template <typename T>
void verify_frozen(const Registry<T>& registry, const LoraState<T>& state,
                   const std::map<std::string, std::uint64_t>& before);

/// Standalone adapter file: magic "GLORA\0\0\0", u32 version, u32 count,
/// then per adapter u32 name length, name bytes, u32 rank, f32 alpha,
/// u32 d_in, u32 d_out, A and B as little-endian f32 row-major.
void save_adapters(const std::filesystem::path& path, const LoraState<float>& state);

struct AdapterRecord {
  std::string target_name;
  std::size_t rank = 0;
  float alpha = 0.f;
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  std::vector<float> a;
  std::vector<float> b;
};
std::vector<AdapterRecord> load_adapter_file(const std::filesystem::path& path);

/// Injects adapters for each record (targets must exist) and copies A, B.
LoraState<float> apply_adapters(Registry<float>& registry, const std::vector<AdapterRecord>& records);

}  // namespace garden
