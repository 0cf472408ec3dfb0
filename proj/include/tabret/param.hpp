#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tabret/matrix.hpp"

namespace tabret {

// A named trainable tensor. Gradients accumulate across tape flushes until
// the optimizer clears them.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Matrix v)
        : name(std::move(n)), value(std::move(v)), grad(value.rows, value.cols) {}
};

// Registry of parameters keyed by hierarchical name. std::map keeps pointer
// stability under insertion, which layer views rely on.
class ParamStore {
public:
    Parameter& add(const std::string& name, Matrix value) {
        auto [it, inserted] = params_.try_emplace(name, Parameter(name, std::move(value)));
        if (!inserted) throw std::logic_error("duplicate parameter: " + name);
        return it->second;
    }
    Parameter& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::out_of_range("no parameter: " + name);
        return it->second;
    }
    const Parameter& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::out_of_range("no parameter: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    void zero_grads() {
        for (auto& [k, p] : params_)
            std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
    }
    void set_all_trainable(bool flag) {
        for (auto& [k, p] : params_) p.trainable = flag;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    size_t size() const { return params_.size(); }

private:
    std::map<std::string, Parameter> params_;
};

}  // namespace tabret
