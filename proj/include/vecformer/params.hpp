#pragma once

// Named trainable tensors. Insertion order is the canonical order used by
// checkpoints and the optimizer, so runs are reproducible byte for byte.

#include <string>
#include <unordered_map>
#include <vector>

#include "vecformer/errors.hpp"
#include "vecformer/rng.hpp"
#include "vecformer/tape.hpp"
#include "vecformer/tensor.hpp"

namespace vecformer {

class ParamStore {
  public:
    void insert(const std::string& name, Tensor t) {
        if (values_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
        order_.push_back(name);
        values_.emplace(name, std::move(t));
    }

    Tensor& at(const std::string& name) {
        auto it = values_.find(name);
        if (it == values_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    bool contains(const std::string& name) const { return values_.count(name) != 0; }
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

    void merge(const ParamStore& other) {
        for (const auto& n : other.names()) insert(n, other.at(n));
    }

  private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> values_;
};

// Per-forward-pass binding of parameters to tape leaves. Parameters whose
// name starts with a frozen prefix become non-differentiable constants.
class BoundParams {
  public:
    // Direct binding of existing tape vars (used by gradient checks).
    explicit BoundParams(std::unordered_map<std::string, Var> vars) : vars_(std::move(vars)) {}

    BoundParams(Tape& tape, const ParamStore& store, const std::vector<std::string>& frozen_prefixes = {}) {
        for (const auto& name : store.names()) {
            bool frozen = false;
            for (const auto& p : frozen_prefixes)
                if (name.rfind(p, 0) == 0) frozen = true;
            vars_.emplace(name, tape.leaf(store.at(name), !frozen));
        }
    }

    Var operator[](const std::string& name) const {
        auto it = vars_.find(name);
        if (it == vars_.end()) throw ContractError("parameter '" + name + "' not bound");
        return it->second;
    }
    bool contains(const std::string& name) const { return vars_.count(name) != 0; }

  private:
    std::unordered_map<std::string, Var> vars_;
};

inline Tensor glorot_uniform(std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t({fan_in, fan_out});
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-a, a);
    return t;
}

}  // namespace vecformer
