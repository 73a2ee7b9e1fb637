#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bambino/errors.hpp"
#include "bambino/tensor.hpp"

namespace bambino {

// Named trainable arrays with deterministic iteration order (insertion order).
class ParameterSet {
public:
    DenseArray& add(const std::string& name, DenseArray array) {
        if (index_.count(name)) throw ConfigError("parameter '" + name + "' already registered");
        array.set_requires_grad(true);
        index_[name] = entries_.size();
        entries_.emplace_back(name, std::move(array));
        return entries_.back().second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    DenseArray& get(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return entries_[it->second].second;
    }
    const DenseArray& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return entries_[it->second].second;
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& [_, a] : entries_) n += a.size();
        return n;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void zero_grads() {
        for (auto& [_, a] : entries_) a.zero_grad();
    }

private:
    std::vector<std::pair<std::string, DenseArray>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Adam accumulators, keyed by parameter name. Accumulators are created lazily
// on the first step and always mirror the parameter shapes.
struct AdamState {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step_count = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(ParameterSet& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& [name, p] : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.grad()) g *= s;
        }
    }
    return norm;
}

// One bias-corrected Adam update. Gradients are left untouched; the caller
// resets them.
inline void adam_step(ParameterSet& params, AdamState& st) {
    for (auto& [name, p] : params) {
        if (!p.has_grad()) {
            throw OptimError("adam_step: parameter '" + name + "' has no gradient");
        }
    }
    st.step_count += 1;
    const double t = static_cast<double>(st.step_count);
    const double bc1 = 1.0 - std::pow(st.beta1, t);
    const double bc2 = 1.0 - std::pow(st.beta2, t);

    for (auto& [name, p] : params) {
        auto& m = st.m[name];
        auto& v = st.v[name];
        if (m.empty()) m.assign(p.size(), 0.0);
        if (v.empty()) v.assign(p.size(), 0.0);
        const auto& g = p.grad();
        auto& x = p.values();
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            x[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
            if (!std::isfinite(x[i])) {
                throw NumericsError("adam_step: parameter '" + name + "' became non-finite");
            }
        }
    }
}

}  // namespace bambino
