#pragma once

#include <string>

#include "cprn/attention.hpp"
#include "cprn/params.hpp"
#include "cprn/tensor.hpp"

namespace cprn::holi {

struct Projections {
    Tensor v_g;       // [H x W x C]
    Tensor g_k, g_v;  // [T x C]
};

struct Masks {
    Tensor mask_holi;  // [H x W x T], per-pixel word softmax
    Tensor mask_roho;  // [H x W x T], mean of prior and holistic attention
};

struct Output {
    Tensor v_g_all;  // [H x W x C]
    Masks masks;
};

void register_params(ParameterStore& store, const std::string& prefix, int c, int d_l);

Projections project(const Tensor& v, const Tensor& l, const ParameterStore& store,
                    const std::string& prefix);

/// Holistic pixel-word attention gated by the location prior. The prior and
/// the per-pixel softmax follow different normalizations; their mean is taken
/// as-is, with `renormalize` optionally restoring per-pixel word sums of 1.
Output guided_attend(const Tensor& v_g, const Tensor& g_k, const Tensor& g_v,
                     const Tensor& mask_roco, bool renormalize = false);

/// Unguided variant: the holistic attention map is used directly.
Output plain_attend(const Tensor& v_g, const Tensor& g_k, const Tensor& g_v);

}  // namespace cprn::holi
