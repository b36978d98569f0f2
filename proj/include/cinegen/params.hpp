#pragma once

// Flat parameter storage with named views, plus the AdamW optimizer.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cinegen/container.hpp"

namespace cinegen {

template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::vector<std::int64_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
  };

  /// Registers a tensor and returns its offset into the flat buffer.
  std::size_t add(std::string name, std::vector<std::int64_t> shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= static_cast<std::size_t>(s);
    Entry e{std::move(name), std::move(shape), values_.size(), n};
    values_.resize(values_.size() + n, T(0));
    entries_.push_back(std::move(e));
    return entries_.back().offset;
  }

  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
  std::span<T> values() { return values_; }
  [[nodiscard]] std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  [[nodiscard]] const T* data() const { return values_.data(); }

  [[nodiscard]] std::vector<NamedTensor> to_tensors() const {
    std::vector<NamedTensor> out;
    for (const auto& e : entries_) {
      NamedTensor t{e.name, e.shape, {}};
      t.values.reserve(e.size);
      for (std::size_t i = 0; i < e.size; ++i)
        t.values.push_back(static_cast<float>(values_[e.offset + i]));
      out.push_back(std::move(t));
    }
    return out;
  }

  /// Loads tensors by name; every registered entry must be present with the same shape.
  void load(std::span<const NamedTensor> tensors) {
    for (const auto& e : entries_) {
      const NamedTensor* found = nullptr;
      for (const auto& t : tensors)
        if (t.name == e.name) found = &t;
      if (found == nullptr) throw std::invalid_argument("checkpoint is missing tensor " + e.name);
      if (found->shape != e.shape || found->values.size() != e.size)
        throw std::invalid_argument("checkpoint tensor " + e.name + " has the wrong shape");
      for (std::size_t i = 0; i < e.size; ++i) values_[e.offset + i] = T(found->values[i]);
    }
  }

 private:
  std::vector<Entry> entries_;
  std::vector<T> values_;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay and bias correction; fixed learning rate.
template <typename T>
class AdamW {
 public:
  AdamW(std::size_t n, AdamWConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<T> params, std::span<const T> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("optimizer size mismatch");
    ++step_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, step_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, step_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grads[i];
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double update = (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.eps);
      double p = params[i];
      p -= cfg_.lr * (update + cfg_.weight_decay * p);
      params[i] = static_cast<T>(p);
    }
  }

  [[nodiscard]] long steps() const { return step_; }

 private:
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  long step_ = 0;
};

}  // namespace cinegen
