#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tailor/errors.hpp"
#include "tailor/tensor.hpp"

namespace tailor {

// Adam wrapped in Lookahead. Every k steps the slow weights move toward the
// fast weights by alpha and the fast weights snap back to them. With
// alpha = 1 the wrapper is a no-op and the trajectory is plain Adam.
struct OptimizerConfig {
    real_t lr = 5e-4;
    real_t beta1 = 0.95;
    real_t beta2 = 0.9;
    real_t eps = 1e-8;
    std::size_t lookahead_k = 5;
    real_t lookahead_alpha = 0.5;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr must be positive");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
            throw ConfigError("betas must lie in (0,1)");
        }
        if (lookahead_k < 1) throw ConfigError("lookahead sync period must be >= 1");
    }
};

class AdamLookahead {
public:
    explicit AdamLookahead(OptimizerConfig config) : config_(config) { config_.validate(); }

    const OptimizerConfig& config() const { return config_; }
    std::size_t step_count() const { return step_; }

    // One update over named parameters. `params` must expose
    // visit(fn(name, Tensor&)); `grads` maps names to gradients.
    template <typename Params>
    void step(Params& params, const std::map<std::string, Tensor>& grads) {
        ++step_;
        const real_t bc1 = real_t(1) - std::pow(config_.beta1, static_cast<real_t>(step_));
        const real_t bc2 = real_t(1) - std::pow(config_.beta2, static_cast<real_t>(step_));
        const bool sync = step_ % config_.lookahead_k == 0;

        params.visit([&](const std::string& name, Tensor& p) {
            auto git = grads.find(name);
            if (git == grads.end()) return;  // parameter not touched this step
            const Tensor& g = git->second;
            if (g.shape() != p.shape()) {
                throw ShapeMismatch("gradient for " + name + " has shape " +
                                    detail::shape_str(g.shape()) + ", parameter has " +
                                    detail::shape_str(p.shape()));
            }
            State& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(p.numel(), 0);
                st.v.assign(p.numel(), 0);
                st.slow = p.data();
            }
            std::vector<real_t> next = p.data();
            for (std::size_t i = 0; i < next.size(); ++i) {
                const real_t gi = g.at(i);
                st.m[i] = config_.beta1 * st.m[i] + (real_t(1) - config_.beta1) * gi;
                st.v[i] = config_.beta2 * st.v[i] + (real_t(1) - config_.beta2) * gi * gi;
                const real_t mhat = st.m[i] / bc1;
                const real_t vhat = st.v[i] / bc2;
                next[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
            }
            if (sync) {
                for (std::size_t i = 0; i < next.size(); ++i) {
                    st.slow[i] += config_.lookahead_alpha * (next[i] - st.slow[i]);
                    next[i] = st.slow[i];
                }
            }
            p = Tensor::from(p.shape(), std::move(next), /*requires_grad=*/true);
        });
    }

    // State access for checkpointing: (suffix, values) per parameter.
    template <typename F>
    void visit_state(F&& fn) const {
        for (const auto& [name, st] : state_) {
            fn(name + ".m", st.m);
            fn(name + ".v", st.v);
            fn(name + ".slow", st.slow);
        }
    }

    void restore_state(const std::string& key, std::vector<real_t> values) {
        // key is "<param>.m" / ".v" / ".slow"
        const auto dot = key.rfind('.');
        if (dot == std::string::npos) throw CorruptCheckpoint("bad optimizer state key " + key);
        const std::string param = key.substr(0, dot);
        const std::string kind = key.substr(dot + 1);
        State& st = state_[param];
        if (kind == "m") st.m = std::move(values);
        else if (kind == "v") st.v = std::move(values);
        else if (kind == "slow") st.slow = std::move(values);
        else throw CorruptCheckpoint("bad optimizer state kind " + kind);
    }

    void set_step_count(std::size_t s) { step_ = s; }

private:
    struct State {
        std::vector<real_t> m, v, slow;
    };

    OptimizerConfig config_;
    std::map<std::string, State> state_;  // ordered: deterministic iteration
    std::size_t step_ = 0;
};

}  // namespace tailor
