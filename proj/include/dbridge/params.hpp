#pragma once

#include <map>
#include <string>
#include <vector>

#include "dbridge/autodiff/tape.hpp"
#include "dbridge/core/array.hpp"
#include "dbridge/core/error.hpp"

namespace dbridge {

// Parameter partition: reverse-only, forward-only, shared.
enum class Block { alpha, phi, nu };
// Learning-rate group.
enum class LrGroup { model, sde, interp };

inline const char* block_name(Block b) {
  switch (b) {
    case Block::alpha: return "alpha";
    case Block::phi: return "phi";
    case Block::nu: return "nu";
  }
  return "?";
}

struct Parameter {
  std::string name;
  Array value;
  Block block = Block::nu;
  bool learnable = true;
  LrGroup group = LrGroup::model;
};

class ParamStore {
 public:
  std::size_t add(std::string name, Array value, Block block, bool learnable, LrGroup group) {
    if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
    index_[name] = params_.size();
    params_.push_back(Parameter{std::move(name), std::move(value), block, learnable, group});
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named " + name);
    return it->second;
  }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  Parameter& at(const std::string& name) { return params_[index_of(name)]; }
  const Parameter& at(const std::string& name) const { return params_[index_of(name)]; }
  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

  std::size_t learnable_count() const {
    std::size_t n = 0;
    for (auto& p : params_)
      if (p.learnable) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// Leaves for every parameter of a store on one tape. With track=false nothing records gradients.
class BoundParams {
 public:
  BoundParams(ad::Tape& tape, const ParamStore& store, bool track) : tape_(&tape), store_(&store) {
    vars_.reserve(store.size());
    for (const auto& p : store.all()) vars_.push_back(tape.leaf(p.value, track && p.learnable));
  }

  ad::Var operator[](std::size_t i) const { return vars_[i]; }
  ad::Var operator[](const std::string& name) const { return vars_[store_->index_of(name)]; }
  ad::Tape& tape() const { return *tape_; }
  const ParamStore& store() const { return *store_; }

  // Accumulated gradients, aligned with the store; zero for parameters without one.
  std::vector<Array> gradients() const {
    std::vector<Array> out;
    out.reserve(vars_.size());
    for (auto v : vars_) out.push_back(v.grad());
    return out;
  }

 private:
  ad::Tape* tape_;
  const ParamStore* store_;
  std::vector<ad::Var> vars_;
};

}  // namespace dbridge
