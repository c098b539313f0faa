#include "cprn/roco.hpp"

#include <cmath>

namespace cprn::roco {

void register_params(ParameterStore& store, const std::string& prefix, int c, int d_l) {
    register_linear(store, prefix + ".h_proj", c, c);
    register_linear(store, prefix + ".w_proj", c, c);
    register_linear(store, prefix + ".h_k", d_l, c);
    register_linear(store, prefix + ".h_v", d_l, c);
    register_linear(store, prefix + ".w_k", d_l, c);
    register_linear(store, prefix + ".w_v", d_l, c);
}

AxisFeatures aggregate_axes(const Tensor& v, const ParameterStore& store,
                            const std::string& prefix) {
    if (v.rank() != 3) throw DimError("aggregate_axes: expects H x W x C");
    Tensor row_mean = mean_pool(v, PoolAxis::Width);    // [H x C]
    Tensor col_mean = mean_pool(v, PoolAxis::Height);   // [W x C]
    return AxisFeatures{
        gelu(linear(row_mean, store, prefix + ".h_proj")),
        gelu(linear(col_mean, store, prefix + ".w_proj")),
    };
}

WordProjections project_words(const Tensor& l, const ParameterStore& store,
                              const std::string& prefix) {
    if (l.rank() != 2) throw DimError("project_words: expects T x d_l");
    if (l.dim(0) < 1) throw ValueError("project_words: empty expression");
    return WordProjections{
        linear(l, store, prefix + ".h_k"),
        linear(l, store, prefix + ".h_v"),
        linear(l, store, prefix + ".w_k"),
        linear(l, store, prefix + ".w_v"),
    };
}

Tensor expand_axis(const Tensor& axis_feat, int h, int w, bool is_vertical) {
    if (axis_feat.rank() != 2) throw DimError("expand_axis: expects rank-2 axis feature");
    const int c = axis_feat.dim(1);
    if (is_vertical) {
        if (axis_feat.dim(0) != h) throw DimError("expand_axis: row extent mismatch");
        return bilinear_resize(reshape(axis_feat, {h, 1, c}), h, w);
    }
    if (axis_feat.dim(0) != w) throw DimError("expand_axis: column extent mismatch");
    return bilinear_resize(reshape(axis_feat, {1, w, c}), h, w);
}

Output interact(const Tensor& v, const Tensor& l, const ParameterStore& store,
                const std::string& prefix) {
    if (v.rank() != 3) throw DimError("roco::interact: expects H x W x C");
    if (l.rank() != 2 || l.dim(0) < 1) throw ValueError("roco::interact: empty expression");
    const int h = v.dim(0), w = v.dim(1), c = v.dim(2);

    AxisFeatures axis = aggregate_axes(v, store, prefix);
    WordProjections words = project_words(l, store, prefix);
    const int t = words.h_k.dim(0);
    const real scale = real(1) / std::sqrt(static_cast<real>(c));

    // Shared axis logits: one [H x T] and one [W x T] matrix.
    Tensor logits_h = mul_scalar(matmul(axis.v_h, transpose2d(words.h_k)), scale);
    Tensor logits_w = mul_scalar(matmul(axis.v_w, transpose2d(words.w_k)), scale);
    opstats::count_logits(static_cast<std::uint64_t>(h + w) * static_cast<std::uint64_t>(t));

    // Gating path: softmax over words, then weighted word values, gated onto the axis feature.
    Tensor v_h_att = mul(matmul(softmax(logits_h, 1), words.h_v), axis.v_h);
    Tensor v_w_att = mul(matmul(softmax(logits_w, 1), words.w_v), axis.v_w);

    // Location prior path: softmax over the spatial axis, one distribution per word.
    Tensor e_h = softmax(logits_h, 0);  // [H x T]
    Tensor e_w = softmax(logits_w, 0);  // [W x T]
    Tensor raw = outer_per_word(e_h, e_w);             // [H x W x T]
    Tensor mask_roco = divide(raw, sum_hw(raw));       // per-word normalization over H*W

    Tensor v_hw_all = add(add(expand_axis(axis.v_h, h, w, true), expand_axis(axis.v_w, h, w, false)),
                          add(expand_axis(v_h_att, h, w, true), expand_axis(v_w_att, h, w, false)));

    return Output{v_hw_all, LocationPrior{mask_roco, e_h, e_w}, axis, v_h_att, v_w_att};
}

}  // namespace cprn::roco
