#pragma once

#include <string>
#include <vector>

#include "cprn/decoder.hpp"
#include "cprn/fusion.hpp"
#include "cprn/params.hpp"
#include "cprn/synth.hpp"
#include "cprn/tensor.hpp"

namespace cprn {

struct ModelConfig {
    int image_h = 64, image_w = 64;
    int channels = 32;
    int d_l = 32;
    int t_max = 20;
    int stages = 4;
    StageConfig stage;
    decoder::Wiring wiring = decoder::Wiring::Consume;
};

/// End-to-end segmentation model: token embedding, patch pyramid with
/// coordinate channels, one composed interaction block per stage, and the
/// progressive decoder with a sigmoid head.
class Model {
public:
    Model(const ModelConfig& cfg, ParameterStore& store);

    /// Score map [image_h x image_w] in (0, 1).
    Tensor forward(const Tensor& image, const std::vector<int>& tokens, ForwardCtx& ctx) const;

    /// Stage outputs only, finest first (for decoder tests).
    std::vector<Tensor> stage_features(const Tensor& image, const std::vector<int>& tokens,
                                       ForwardCtx& ctx) const;

    const ModelConfig& config() const { return cfg_; }
    int stage_extent_h(int stage) const { return cfg_.image_h / (4 << stage); }
    int stage_extent_w(int stage) const { return cfg_.image_w / (4 << stage); }
    static std::string stage_prefix(int stage) { return "st" + std::to_string(stage); }

private:
    ModelConfig cfg_;
    ParameterStore* store_;
    StageFn stage_fn_;
};

}  // namespace cprn
