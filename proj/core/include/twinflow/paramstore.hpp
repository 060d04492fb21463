#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "twinflow/tensor.hpp"

namespace twinflow {

// Named parameter tensors with deterministic (sorted-name) iteration.
// Values are held by shared_ptr so two stores can alias one tensor; the
// checkpoint writer and the duplication procedure rely on that identity.
template <class Real>
class ParamStoreT {
public:
  using TensorPtr = std::shared_ptr<TensorT<Real>>;

  TensorPtr add(const std::string& name, TensorT<Real> t) {
    require(!params_.count(name), "duplicate parameter name: " + name);
    auto p = std::make_shared<TensorT<Real>>(std::move(t));
    params_.emplace(name, p);
    return p;
  }

  void alias(const std::string& name, TensorPtr p) {
    require(!params_.count(name), "duplicate parameter name: " + name);
    require(p != nullptr, "alias to null tensor: " + name);
    params_.emplace(name, std::move(p));
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }

  TensorT<Real>& get(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return *it->second;
  }
  const TensorT<Real>& get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return *it->second;
  }
  TensorPtr ptr(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "unknown parameter: " + name);
    return it->second;
  }

  const std::map<std::string, TensorPtr>& entries() const { return params_; }

  std::size_t scalar_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_)
      if (name.rfind(prefix, 0) == 0) n += t->numel();
    return n;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(name);
    return out;
  }

private:
  std::map<std::string, TensorPtr> params_;
};

using ParamStore = ParamStoreT<float>;

template <class Real>
using GradMap = std::map<std::string, TensorT<Real>>;

}  // namespace twinflow
