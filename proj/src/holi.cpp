#include "cprn/holi.hpp"

#include <cmath>

namespace cprn::holi {

namespace {

/// Per-pixel word attention map [H x W x T] from holistic features.
Tensor holistic_mask(const Tensor& v_g, const Tensor& g_k) {
    const int h = v_g.dim(0), w = v_g.dim(1), c = v_g.dim(2);
    const int t = g_k.dim(0);
    const real scale = real(1) / std::sqrt(static_cast<real>(c));
    Tensor pixels = reshape(v_g, {h * w, c});
    Tensor logits = mul_scalar(matmul(pixels, transpose2d(g_k)), scale);  // [HW x T]
    opstats::count_logits(static_cast<std::uint64_t>(h) * w * t);
    return reshape(softmax(logits, 1), {h, w, t});
}

Tensor gate_values(const Tensor& weights, const Tensor& g_v, const Tensor& v_g) {
    const int h = v_g.dim(0), w = v_g.dim(1), c = v_g.dim(2);
    const int t = g_v.dim(0);
    Tensor mixed = matmul(reshape(weights, {h * w, t}), g_v);  // [HW x C]
    return mul(reshape(mixed, {h, w, c}), v_g);
}

}  // namespace

void register_params(ParameterStore& store, const std::string& prefix, int c, int d_l) {
    register_linear(store, prefix + ".vg", c, c);
    register_linear(store, prefix + ".g_k", d_l, c);
    register_linear(store, prefix + ".g_v", d_l, c);
}

Projections project(const Tensor& v, const Tensor& l, const ParameterStore& store,
                    const std::string& prefix) {
    if (v.rank() != 3) throw DimError("holi::project: expects H x W x C");
    if (l.rank() != 2) throw DimError("holi::project: expects T x d_l");
    return Projections{
        linear(v, store, prefix + ".vg"),
        linear(l, store, prefix + ".g_k"),
        linear(l, store, prefix + ".g_v"),
    };
}

Output guided_attend(const Tensor& v_g, const Tensor& g_k, const Tensor& g_v,
                     const Tensor& mask_roco, bool renormalize) {
    if (v_g.rank() != 3) throw DimError("guided_attend: v_g must be H x W x C");
    const int h = v_g.dim(0), w = v_g.dim(1);
    const int t = g_k.dim(0);
    if (mask_roco.rank() != 3 || mask_roco.dim(0) != h || mask_roco.dim(1) != w ||
        mask_roco.dim(2) != t) {
        throw DimError("guided_attend: prior shape does not match pixel-word logits");
    }
    Tensor mask_holi = holistic_mask(v_g, g_k);
    Tensor mask_roho = mul_scalar(add(mask_roco, mask_holi), real(0.5));
    if (renormalize) {
        mask_roho = divide(mask_roho, sum_last_keep(mask_roho));
    }
    return Output{gate_values(mask_roho, g_v, v_g), Masks{mask_holi, mask_roho}};
}

Output plain_attend(const Tensor& v_g, const Tensor& g_k, const Tensor& g_v) {
    if (v_g.rank() != 3) throw DimError("plain_attend: v_g must be H x W x C");
    Tensor mask_holi = holistic_mask(v_g, g_k);
    return Output{gate_values(mask_holi, g_v, v_g), Masks{mask_holi, mask_holi}};
}

}  // namespace cprn::holi
