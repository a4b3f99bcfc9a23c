#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mlsal/autograd.hpp"
#include "mlsal/errors.hpp"
#include "mlsal/ops.hpp"

namespace mlsal {

/// Which optimizer group a parameter belongs to.
enum class ParamGroup { encoder, decoder };

struct Parameter {
    std::string name;
    Var var;
    ParamGroup group;
};

/// Ordered registry of every trainable array in a model. Insertion order is
/// the canonical order for checkpoints and optimizer state.
class ParamStore {
public:
    Var add(const std::string& name, Tensor init, ParamGroup group) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        index_[name] = params_.size();
        params_.push_back({name, Var::leaf(std::move(init)), group});
        return params_.back().var;
    }

    const std::vector<Parameter>& all() const noexcept { return params_; }
    std::vector<Parameter>& all() noexcept { return params_; }
    std::size_t size() const noexcept { return params_.size(); }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    Parameter& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw LoadError("unknown parameter '" + name + "'");
        return params_[it->second];
    }
    const Parameter& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw LoadError("unknown parameter '" + name + "'");
        return params_[it->second];
    }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.var.value().size();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.var.zero_grad();
    }

private:
    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

/// Convolution weights and bias registered under "<prefix>.weight|bias".
///
/// Initialization: weights are drawn from N(0, 2 / fan_in) with
/// fan_in = cin * k * k, biases start at zero. `zero_init` makes both zero.
struct Conv {
    Var weight;
    Var bias;
    int dilation = 1;

    static Conv create(ParamStore& store, const std::string& prefix, int cin, int cout, int k, int dilation,
                       ParamGroup group, std::mt19937_64& rng, bool zero_init = false) {
        Tensor w(std::vector<int>{cout, cin, k, k});
        if (!zero_init) {
            std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (cin * k * k)));
            for (double& v : w.storage()) v = dist(rng);
        }
        Conv c;
        c.weight = store.add(prefix + ".weight", std::move(w), group);
        c.bias = store.add(prefix + ".bias", Tensor(std::vector<int>{cout}), group);
        c.dilation = dilation;
        return c;
    }

    Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias, dilation); }

    int in_channels() const { return weight.value().dim(1); }
    int out_channels() const { return weight.value().dim(0); }
};

/// Stride-2 transposed convolution, [cin, cout, 2, 2]; fan-in scaled like Conv.
struct UpConv {
    Var weight;
    Var bias;

    static UpConv create(ParamStore& store, const std::string& prefix, int cin, int cout, ParamGroup group,
                         std::mt19937_64& rng) {
        Tensor w(std::vector<int>{cin, cout, 2, 2});
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / cin));
        for (double& v : w.storage()) v = dist(rng);
        UpConv u;
        u.weight = store.add(prefix + ".weight", std::move(w), group);
        u.bias = store.add(prefix + ".bias", Tensor(std::vector<int>{cout}), group);
        return u;
    }

    Var operator()(const Var& x) const { return ops::conv_transpose2x2(x, weight, bias); }
};

}  // namespace mlsal
