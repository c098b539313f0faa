#pragma once

#include <map>
#include <string>
#include <vector>

#include "cprn/params.hpp"

namespace cprn {

struct AdamWConfig {
    real lr = real(1e-3);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    real weight_decay = real(0.01);
};

/// Adam with decoupled weight decay: the decay multiplies parameters directly
/// and never enters the moment estimates.
class AdamW {
public:
    AdamW(ParameterStore& store, AdamWConfig cfg);

    /// One update over every parameter, in name order. Parameters absent from
    /// `grads` are treated as zero-gradient (decay still applies).
    /// lr_override < 0 keeps the configured rate.
    void step(const std::map<std::string, std::vector<real>>& grads, real lr_override = real(-1));

    long step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    ParameterStore* store_;
    AdamWConfig cfg_;
    std::map<std::string, std::vector<real>> m_, v_;
    long t_ = 0;
};

}  // namespace cprn
