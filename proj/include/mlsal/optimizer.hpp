#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mlsal/archive.hpp"
#include "mlsal/params.hpp"

namespace mlsal {

struct AdamGroup {
    ParamGroup group;
    double lr;
    std::vector<std::size_t> members;  // indices into the ParamStore
};

/// Adam with per-group learning rates and loss-coupled L2 weight decay
/// (g <- g + wd * theta before the moment updates).
class Adam {
public:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    Adam(const ParamStore& store, double lr_encoder, double lr_decoder, double weight_decay)
        : weight_decay_(weight_decay) {
        if (!(lr_encoder > 0) || !(lr_decoder > 0)) throw ConfigError("learning rates must be > 0");
        if (!(weight_decay >= 0)) throw ConfigError("weight decay must be >= 0");
        groups_ = {{ParamGroup::encoder, lr_encoder, {}}, {ParamGroup::decoder, lr_decoder, {}}};
        const auto& ps = store.all();
        for (std::size_t i = 0; i < ps.size(); ++i) {
            groups_[ps[i].group == ParamGroup::encoder ? 0 : 1].members.push_back(i);
            m_.push_back(Tensor::like(ps[i].var.value()));
            v_.push_back(Tensor::like(ps[i].var.value()));
        }
        for (const auto& g : groups_) {
            if (g.members.empty()) {
                throw ConfigError(std::string("optimizer group '") +
                                  (g.group == ParamGroup::encoder ? "encoder" : "decoder") + "' is empty");
            }
        }
    }

    const std::vector<AdamGroup>& groups() const noexcept { return groups_; }
    long steps() const noexcept { return t_; }
    double weight_decay() const noexcept { return weight_decay_; }

    void step(ParamStore& store) {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        auto& ps = store.all();
        for (const auto& g : groups_) {
            for (std::size_t idx : g.members) {
                Var& p = ps[idx].var;
                Tensor& theta = p.mutable_value();
                const Tensor& grad = p.grad();
                const bool has_grad = grad.same_shape(theta);
                Tensor& m = m_[idx];
                Tensor& v = v_[idx];
                for (std::size_t k = 0; k < theta.size(); ++k) {
                    const double gk = (has_grad ? grad[k] : 0.0) + weight_decay_ * theta[k];
                    m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gk;
                    v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gk * gk;
                    theta[k] -= g.lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + kEps);
                }
            }
        }
    }

    void save(Archive& a, const ParamStore& store) const {
        a.set_meta("adam_t", std::to_string(t_));
        for (std::size_t i = 0; i < m_.size(); ++i) {
            a.put("adam.m." + store.all()[i].name, m_[i]);
            a.put("adam.v." + store.all()[i].name, v_[i]);
        }
    }

    void load(const Archive& a, const ParamStore& store) {
        t_ = std::stol(a.meta("adam_t"));
        for (std::size_t i = 0; i < m_.size(); ++i) {
            const auto& name = store.all()[i].name;
            const Tensor& m = a.get("adam.m." + name);
            const Tensor& v = a.get("adam.v." + name);
            if (!m.same_shape(m_[i]) || !v.same_shape(v_[i])) throw LoadError("optimizer state shape mismatch for " + name);
            m_[i] = m;
            v_[i] = v;
        }
    }

private:
    double weight_decay_;
    std::vector<AdamGroup> groups_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace mlsal
