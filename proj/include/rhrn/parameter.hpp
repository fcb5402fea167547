#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "rhrn/tensor.hpp"

namespace rhrn {

enum class ParamKind {
  Weight,  // receives gradients unless frozen
  Buffer,  // normalization running statistics; never receives gradients
};

/// A named model tensor. The value lives behind a shared_ptr so that a tape
/// can reference it without copying; mutate only when no tape is alive.
template <typename Scalar>
struct Parameter {
  std::string name;
  std::shared_ptr<Tensor<Scalar>> value;
  ParamKind kind = ParamKind::Weight;
  bool frozen = false;

  bool trainable() const { return kind == ParamKind::Weight && !frozen; }
  const Shape& shape() const { return value->shape(); }
};

/// Insertion-ordered table of uniquely named parameters. Entries have stable
/// addresses for the table's lifetime.
template <typename Scalar>
class ParameterTable {
 public:
  ParameterTable() = default;
  ParameterTable(const ParameterTable&) = delete;
  ParameterTable& operator=(const ParameterTable&) = delete;
  ParameterTable(ParameterTable&&) noexcept = default;
  ParameterTable& operator=(ParameterTable&&) noexcept = default;

  Parameter<Scalar>& create(std::string name, Shape shape, ParamKind kind, bool frozen) {
    if (find(name) != nullptr) throw ValidationError("duplicate parameter name " + name);
    auto p = std::make_unique<Parameter<Scalar>>();
    p->name = std::move(name);
    p->value = std::make_shared<Tensor<Scalar>>(std::move(shape));
    p->kind = kind;
    p->frozen = frozen;
    entries_.push_back(std::move(p));
    return *entries_.back();
  }

  Parameter<Scalar>* find(std::string_view name) {
    for (auto& p : entries_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<Scalar>* find(std::string_view name) const {
    for (const auto& p : entries_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t size() const { return entries_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *entries_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *entries_[i]; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.cbegin(); }
  auto end() const { return entries_.cend(); }

  Index element_count() const {
    Index n = 0;
    for (const auto& p : entries_) n += p->value->numel();
    return n;
  }
  Index trainable_count() const {
    Index n = 0;
    for (const auto& p : entries_)
      if (p->trainable()) n += p->value->numel();
    return n;
  }

  /// Sets the frozen flag on every entry whose name starts with prefix.
  void set_frozen(std::string_view prefix, bool frozen) {
    for (auto& p : entries_)
      if (std::string_view(p->name).starts_with(prefix)) p->frozen = frozen;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> entries_;
};

}  // namespace rhrn
