#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "bcq/config.hpp"
#include "bcq/params.hpp"

namespace bcq {

template <typename T>
struct GradItem {
    typename ParamStore<T>::Entry* entry;
    Tensor<T>* grad; // full-size gradient; only the trainable prefix is used
};

// Global gradient norm over trainable elements, accumulated in double.
// Scales all gradients in place when the norm exceeds max_norm (> 0).
template <typename T>
double clip_global_norm(std::vector<GradItem<T>>& items, double max_norm) {
    double sq = 0.0;
    for (auto& it : items) {
        int64_t n = it.entry->trainable_prefix;
        for (int64_t i = 0; i < n; ++i) {
            double g = static_cast<double>((*it.grad)[i]);
            sq += g * g;
        }
    }
    double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        T s = static_cast<T>(max_norm / norm);
        for (auto& it : items)
            for (auto& g : it.grad->v) g *= s;
    }
    return norm;
}

// Adam, optionally with decoupled weight decay (AdamW). Moment buffers are
// keyed by parameter name so they survive across steps; updates touch only
// each entry's trainable prefix.
template <typename T>
class Adam {
  public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0,
         bool decoupled = false)
        : b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay), decoupled_(decoupled) {}

    static Adam from_stage(const StageConfig& s) {
        bool adamw = s.optimizer == "adamw";
        return Adam(0.9, 0.999, 1e-8, adamw ? s.weight_decay : 0.0, adamw);
    }

    void step(std::vector<GradItem<T>>& items, double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
        for (auto& it : items) {
            auto& e = *it.entry;
            int64_t n = e.trainable_prefix;
            if (n == 0) continue;
            Slot& s = slots_[e.name];
            if (s.m.v.empty()) {
                s.m = Tensor<T>(e.value.shape);
                s.v = Tensor<T>(e.value.shape);
            }
            const Tensor<T>& g = *it.grad;
            for (int64_t i = 0; i < n; ++i) {
                double gi = static_cast<double>(g[i]);
                double m = b1_ * static_cast<double>(s.m[i]) + (1.0 - b1_) * gi;
                double v = b2_ * static_cast<double>(s.v[i]) + (1.0 - b2_) * gi * gi;
                s.m[i] = static_cast<T>(m);
                s.v[i] = static_cast<T>(v);
                double mhat = m / bc1;
                double vhat = v / bc2;
                double upd = mhat / (std::sqrt(vhat) + eps_);
                if (decoupled_ && wd_ > 0) upd += wd_ * static_cast<double>(e.value[i]);
                e.value[i] = static_cast<T>(static_cast<double>(e.value[i]) - lr * upd);
            }
        }
    }

    int64_t steps() const { return t_; }

  private:
    struct Slot {
        Tensor<T> m, v;
    };
    double b1_, b2_, eps_, wd_;
    bool decoupled_;
    int64_t t_ = 0;
    std::map<std::string, Slot> slots_;
};

// step decay: lr = base * gamma^(epoch / step), integer division
inline double step_lr(double base, double gamma, int step, int epoch) {
    return base * std::pow(gamma, static_cast<double>(epoch / step));
}

} // namespace bcq
