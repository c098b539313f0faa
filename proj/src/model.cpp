#include "cprn/model.hpp"

namespace cprn {

Model::Model(const ModelConfig& cfg, ParameterStore& store) : cfg_(cfg), store_(&store) {
    if (cfg.stages < 1) throw ConfigError("model: at least one stage required");
    const int coarsest = 4 << (cfg.stages - 1);
    if (cfg.image_h % coarsest != 0 || cfg.image_w % coarsest != 0) {
        throw ConfigError("model: image extents must divide by " + std::to_string(coarsest));
    }
    synth::register_embedding(store, cfg.d_l);
    synth::register_encoder(store, "enc", cfg.channels, cfg.stages);
    for (int s = 0; s < cfg.stages; ++s) {
        register_stage(store, stage_prefix(s), cfg.stage, cfg.channels, cfg.d_l,
                       stage_extent_h(s), stage_extent_w(s));
    }
    decoder::register_params(store, "dec", cfg.channels, cfg.stages);
    stage_fn_ = compose_block(cfg.stage);
}

std::vector<Tensor> Model::stage_features(const Tensor& image, const std::vector<int>& tokens,
                                          ForwardCtx& ctx) const {
    if (tokens.empty()) throw ValueError("empty expression");
    if (image.rank() != 3 || image.dim(0) != cfg_.image_h || image.dim(1) != cfg_.image_w) {
        throw DimError("model: image extent mismatch");
    }
    Tensor l = synth::embed_expression(*store_, tokens, cfg_.t_max);
    std::vector<Tensor> pyramid = synth::encode_pyramid(image, *store_, "enc", cfg_.stages);
    std::vector<Tensor> fused;
    fused.reserve(pyramid.size());
    for (int s = 0; s < cfg_.stages; ++s) {
        fused.push_back(stage_fn_(pyramid[static_cast<size_t>(s)], l, *store_, stage_prefix(s), ctx));
    }
    return fused;
}

Tensor Model::forward(const Tensor& image, const std::vector<int>& tokens, ForwardCtx& ctx) const {
    std::vector<Tensor> fused = stage_features(image, tokens, ctx);
    return decoder::decode(fused, *store_, "dec", cfg_.image_h, cfg_.image_w, cfg_.wiring);
}

}  // namespace cprn
