#pragma once

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lchd/types.hpp"

namespace lchd {

// One named parameter tensor plus its gradient slot. Rank-1 tensors are held
// as 1 x n matrices; `extents` keeps the logical shape for serialization.
struct Param {
  Mat value;
  Mat grad;
  std::vector<std::int64_t> extents;

  Index size() const { return value.size(); }
  int rank() const { return static_cast<int>(extents.size()); }
};

// Named parameter collection. Iteration order is insertion order, which makes
// optimizer sweeps, serialization and checksums deterministic. References
// returned by add/at stay valid across later insertions.
class ParamStore {
 public:
  Param& add(const std::string& name, Index rows, Index cols) {
    return emplace(name, rows, cols, {rows, cols});
  }

  Param& add_vector(const std::string& name, Index n) {
    return emplace(name, 1, n, {n});
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: no parameter named " + name);
    return params_[it->second];
  }

  const Param& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: no parameter named " + name);
    return params_[it->second];
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return params_.size(); }

  std::int64_t param_count() const {
    std::int64_t total = 0;
    for (const auto& p : params_) total += p.size();
    return total;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.setZero();
  }

  ParamStore clone() const {
    ParamStore out;
    out.names_ = names_;
    out.index_ = index_;
    out.params_ = params_;
    return out;
  }

 private:
  Param& emplace(const std::string& name, Index rows, Index cols,
                 std::vector<std::int64_t> extents) {
    if (name.empty()) throw std::invalid_argument("ParamStore: empty parameter name");
    if (contains(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    index_[name] = params_.size();
    names_.push_back(name);
    Param p;
    p.value = Mat::Zero(rows, cols);
    p.grad = Mat::Zero(rows, cols);
    p.extents = std::move(extents);
    params_.push_back(std::move(p));
    return params_.back();
  }

  std::vector<std::string> names_;
  std::deque<Param> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace lchd
