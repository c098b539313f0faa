#pragma once

#include <string>

#include "cprn/attention.hpp"
#include "cprn/params.hpp"
#include "cprn/tensor.hpp"

namespace cprn::roco {

struct AxisFeatures {
    Tensor v_h;  // [H x C] row-wise (vertical axis)
    Tensor v_w;  // [W x C] column-wise (horizontal axis)
};

struct WordProjections {
    Tensor h_k, h_v;  // [T x C]
    Tensor w_k, w_v;  // [T x C]
};

/// Per-word rank-1 spatial distribution over the feature grid.
struct LocationPrior {
    Tensor mask_roco;  // [H x W x T], each word slice sums to 1 over H*W
    Tensor e_h;        // [H x T], columns sum to 1
    Tensor e_w;        // [W x T]
};

struct Output {
    Tensor v_hw_all;  // [H x W x C]
    LocationPrior prior;
    AxisFeatures axis;
    Tensor v_h_att, v_w_att;  // gated axis features, for the fusion variants
};

void register_params(ParameterStore& store, const std::string& prefix, int c, int d_l);

/// Mean-pool each spatial axis, project, GeLU.
AxisFeatures aggregate_axes(const Tensor& v, const ParameterStore& store,
                            const std::string& prefix);

/// Four independent affine projections of the token matrix.
WordProjections project_words(const Tensor& l, const ParameterStore& store,
                              const std::string& prefix);

/// Full row-and-column interaction. The axis logit matrices are computed once
/// and shared between the gating softmax (over words) and the location prior
/// softmax (over the spatial axis), so the op cost is (H+W)*T logits.
Output interact(const Tensor& v, const Tensor& l, const ParameterStore& store,
                const std::string& prefix);

/// Replicate an axis feature to the full grid: [H x C] or [W x C] -> [H x W x C].
Tensor expand_axis(const Tensor& axis_feat, int h, int w, bool is_vertical);

}  // namespace cprn::roco
