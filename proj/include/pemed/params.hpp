#pragma once

#include <map>
#include <string>

#include "pemed/autograd.hpp"

namespace pemed {

/// Named learnable tensors, iterated in name order.
template <class T>
class ParamStore {
 public:
  using Map = std::map<std::string, Var<T>>;

  void add(const std::string& name, Tensor<T> value) {
    if (params_.contains(name)) throw Error(ErrorCode::InvalidArgument, "duplicate parameter " + name);
    params_.emplace(name, Var<T>(std::move(value), true));
  }

  const Var<T>& operator[](const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::InvalidArgument, "missing parameter " + name);
    return it->second;
  }

  Var<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error(ErrorCode::InvalidArgument, "missing parameter " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.contains(name); }
  std::size_t size() const { return params_.size(); }
  typename Map::const_iterator begin() const { return params_.begin(); }
  typename Map::const_iterator end() const { return params_.end(); }
  typename Map::iterator begin() { return params_.begin(); }
  typename Map::iterator end() { return params_.end(); }

  Index element_count() const {
    Index n = 0;
    for (const auto& [name, v] : params_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : params_) v.zero_grad();
  }

  /// Deep copy with fresh leaves (no shared gradient state).
  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, v] : params_) out.add(name, v.value().template cast<U>());
    return out;
  }

 private:
  Map params_;
};

}  // namespace pemed
