#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "garden/autograd.hpp"

namespace garden {

/// A named learnable tensor. Frozen parameters never require grad and are
/// skipped by every optimizer.
template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

/// Insertion-ordered parameter registry with unique hierarchical names.
template <typename T>
class ParameterSet {
 public:
  /// Registers a new leaf. Throws ConfigError on a duplicate name.
  Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;

  std::vector<Parameter<T>>& all() { return params_; }
  const std::vector<Parameter<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  void set_trainable(const std::string& name, bool trainable);
  void freeze_all();

  /// Allocates zero-filled gradients for trainable parameters, drops the rest.
  void zero_grad();

  /// Scalar element count over trainable (or frozen) parameters.
  std::size_t scalar_count(bool trainable) const;
  std::size_t scalar_count() const { return scalar_count(true) + scalar_count(false); }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

/// 64-bit FNV-1a over the raw bytes of a tensor.
template <typename T>
std::uint64_t tensor_checksum(const Tensor<T>& t);

}  // namespace garden
