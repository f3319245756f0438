#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "spdnet/blocks.hpp"
#include "spdnet/errors.hpp"

namespace spdnet {

struct AdamOptions {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 10.0;  // <= 0 disables clipping
};

/// Adam with optional global gradient-norm clipping.
template <typename T>
class Adam {
public:
    Adam(ParamList<T> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
        for (const auto& p : params_) {
            m_.emplace_back(p.var.shape());
            v_.emplace_back(p.var.shape());
        }
    }

    /// Applies one update from the accumulated gradients and returns the
    /// gradient norm before clipping.
    double step() {
        double sq = 0.0;
        for (const auto& p : params_) {
            if (p.var.grad().empty()) continue;
            for (T g : p.var.grad().values()) sq += static_cast<double>(g) * g;
        }
        const double norm = std::sqrt(sq);
        T scale = T{1};
        if (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) scale = static_cast<T>(opt_.clip_norm / (norm + 1e-6));

        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(opt_.beta1);
        const T b2 = static_cast<T>(opt_.beta2);
        const T step_size = static_cast<T>(opt_.lr / bc1);
        const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
        const T eps = static_cast<T>(opt_.eps);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Var<T> var = params_[i].var;
            const Tensor<T>& grad = var.grad();
            if (grad.empty()) continue;
            Tensor<T>& value = var.mutable_value();
            T* m = m_[i].data();
            T* v = v_[i].data();
            for (std::size_t k = 0; k < value.size(); ++k) {
                const T g = grad[k] * scale;
                m[k] = b1 * m[k] + (T{1} - b1) * g;
                v[k] = b2 * v[k] + (T{1} - b2) * g * g;
                value[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
            }
        }
        return norm;
    }

    long steps() const { return t_; }
    const AdamOptions& options() const { return opt_; }

    std::map<std::string, Tensor<T>> first_moments() const { return by_name(m_); }
    std::map<std::string, Tensor<T>> second_moments() const { return by_name(v_); }

    void load_state(const std::map<std::string, Tensor<T>>& m, const std::map<std::string, Tensor<T>>& v, long t) {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& name = params_[i].name;
            const auto mi = m.find(name);
            const auto vi = v.find(name);
            if (mi == m.end() || vi == v.end()) throw CheckpointIncompatible("optimizer state missing for " + name);
            if (mi->second.shape() != m_[i].shape() || vi->second.shape() != v_[i].shape()) {
                throw CheckpointIncompatible("optimizer state shape mismatch for " + name);
            }
            m_[i] = mi->second;
            v_[i] = vi->second;
        }
        t_ = t;
    }

private:
    std::map<std::string, Tensor<T>> by_name(const std::vector<Tensor<T>>& s) const {
        std::map<std::string, Tensor<T>> out;
        for (std::size_t i = 0; i < params_.size(); ++i) out.emplace(params_[i].name, s[i]);
        return out;
    }

    ParamList<T> params_;
    AdamOptions opt_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    long t_ = 0;
};

}  // namespace spdnet
