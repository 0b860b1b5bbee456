#include "garden/parameters.hpp"

#include <cstring>

namespace garden {

template <typename T>
Var<T> ParameterSet<T>::add(const std::string& name, Tensor<T> init, bool trainable) {
  if (name.empty()) throw ConfigError("parameter name must be non-empty");
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  Var<T> v(std::move(init), trainable);
  index_.emplace(name, params_.size());
  params_.push_back({name, v, trainable});
  return v;
}

template <typename T>
Parameter<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second];
}

template <typename T>
void ParameterSet<T>::set_trainable(const std::string& name, bool trainable) {
  auto& p = get(name);
  p.trainable = trainable;
  p.var.set_requires_grad(trainable);
  if (!trainable) p.var.clear_grad();
}

template <typename T>
void ParameterSet<T>::freeze_all() {
  for (auto& p : params_) {
    p.trainable = false;
    p.var.set_requires_grad(false);
    p.var.clear_grad();
  }
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) {
    if (p.trainable) {
      p.var.zero_grad();
    } else {
      p.var.clear_grad();
    }
  }
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count(bool trainable) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p.trainable == trainable) n += p.var.size();
  }
  return n;
}

template <typename T>
std::uint64_t tensor_checksum(const Tensor<T>& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.vec().data());
  for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template std::uint64_t tensor_checksum(const Tensor<float>&);
template std::uint64_t tensor_checksum(const Tensor<double>&);

}  // namespace garden
