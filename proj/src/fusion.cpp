#include "cprn/fusion.hpp"

namespace cprn {

Variant variant_from_string(const std::string& s) {
    if (s == "holi_star") return Variant::HoliStar;
    if (s == "roco_only") return Variant::RocoOnly;
    if (s == "serial") return Variant::Serial;
    if (s == "parallel_star") return Variant::ParallelStar;
    if (s == "parallel_guided") return Variant::ParallelGuided;
    throw ConfigError("unknown variant: " + s);
}

std::string to_string(Variant v) {
    switch (v) {
        case Variant::HoliStar: return "holi_star";
        case Variant::RocoOnly: return "roco_only";
        case Variant::Serial: return "serial";
        case Variant::ParallelStar: return "parallel_star";
        case Variant::ParallelGuided: return "parallel_guided";
    }
    return "?";
}

FuseKind fuse_from_string(const std::string& s) {
    if (s == "eq5") return FuseKind::Sum;
    if (s == "f1") return FuseKind::F1;
    if (s == "f2") return FuseKind::F2;
    if (s == "f3") return FuseKind::F3;
    if (s == "f4") return FuseKind::F4;
    throw ConfigError("unknown fusion kind: " + s);
}

std::string to_string(FuseKind k) {
    switch (k) {
        case FuseKind::Sum: return "eq5";
        case FuseKind::F1: return "f1";
        case FuseKind::F2: return "f2";
        case FuseKind::F3: return "f3";
        case FuseKind::F4: return "f4";
    }
    return "?";
}

namespace fusion {

namespace {

/// Merge whichever pathway outputs exist, add the residual.
Tensor merge_flex(const Tensor& hw, const Tensor& g, const Tensor& v,
                  const ParameterStore& store, const std::string& prefix, ForwardCtx& ctx,
                  bool use_ffn, real dropout_p) {
    Tensor s;
    if (hw.defined()) {
        s = relu(linear(hw, store, prefix + ".hw"));
    }
    if (g.defined()) {
        Tensor fg = relu(linear(g, store, prefix + ".g"));
        s = s.defined() ? add(s, fg) : fg;
    }
    if (!s.defined()) throw ConfigError("merge: no pathway outputs");
    if (use_ffn) {
        Tensor hidden = relu(linear(s, store, prefix + ".ffn1"));
        if (ctx.training && dropout_p > real(0)) {
            if (ctx.dropout_rng == nullptr) {
                throw ConfigError("training forward requires a dropout rng");
            }
            hidden = dropout(hidden, dropout_p, *ctx.dropout_rng, true);
        }
        s = linear(hidden, store, prefix + ".ffn2");
    }
    return add(v, s);
}

void register_merge_flex(ParameterStore& store, const std::string& prefix, int c, bool with_ffn,
                         bool with_hw, bool with_g) {
    if (with_hw) register_linear(store, prefix + ".hw", c, c);
    if (with_g) register_linear(store, prefix + ".g", c, c);
    if (with_ffn) {
        register_linear(store, prefix + ".ffn1", c, c);
        // zero init keeps each stage an identity map at the start of training
        register_linear(store, prefix + ".ffn2", c, c, Init::Zero);
    }
}

}  // namespace

void register_merge(ParameterStore& store, const std::string& prefix, int c, bool with_ffn) {
    register_merge_flex(store, prefix, c, with_ffn, true, true);
}

StageOutput merge_paths(const Tensor& v_hw_all, const Tensor& v_g_all, const Tensor& v,
                        const ParameterStore& store, const std::string& prefix,
                        ForwardCtx& ctx, real dropout_p) {
    if (v_hw_all.shape() != v.shape() || v_g_all.shape() != v.shape()) {
        throw DimError("merge_paths: pathway outputs must match the stage feature shape");
    }
    return StageOutput{merge_flex(v_hw_all, v_g_all, v, store, prefix, ctx, true, dropout_p)};
}

void register_fuse(ParameterStore& store, const std::string& prefix, FuseKind kind, int c) {
    switch (kind) {
        case FuseKind::Sum:
        case FuseKind::F1:
        case FuseKind::F2:
            break;
        case FuseKind::F3:
            register_linear(store, prefix + ".f3", 2 * c, c);
            break;
        case FuseKind::F4:
            register_linear(store, prefix + ".f4h", 2 * c, c);
            register_linear(store, prefix + ".f4w", 2 * c, c);
            register_linear(store, prefix + ".f4o", 2 * c, c);
            break;
    }
}

Tensor fuse_variant(FuseKind kind, const FuseParts& parts, const ParameterStore& store,
                    const std::string& prefix) {
    if (!parts.v.defined() || parts.v.rank() != 3) {
        throw DimError("fuse_variant: stage feature must be H x W x C");
    }
    const int h = parts.v.dim(0), w = parts.v.dim(1);
    auto up_h = [&](const Tensor& x) { return roco::expand_axis(x, h, w, true); };
    auto up_w = [&](const Tensor& x) { return roco::expand_axis(x, h, w, false); };
    switch (kind) {
        case FuseKind::Sum:
            return add(add(up_h(parts.v_h), up_w(parts.v_w)),
                       add(up_h(parts.v_h_att), up_w(parts.v_w_att)));
        case FuseKind::F1:
            return add(mul(up_h(parts.v_h_att), up_w(parts.v_w_att)), parts.v);
        case FuseKind::F2:
            return mul(mul(up_h(parts.v_h_att), up_w(parts.v_w_att)), parts.v);
        case FuseKind::F3:
            return linear(concat_last({up_h(add(parts.v_h, parts.v_h_att)),
                                       up_w(add(parts.v_w, parts.v_w_att))}),
                          store, prefix + ".f3");
        case FuseKind::F4: {
            Tensor a = linear(concat_last({up_h(parts.v_h), up_h(parts.v_h_att)}), store,
                              prefix + ".f4h");
            Tensor b = linear(concat_last({up_w(parts.v_w), up_w(parts.v_w_att)}), store,
                              prefix + ".f4w");
            return linear(concat_last({a, b}), store, prefix + ".f4o");
        }
    }
    throw ConfigError("fuse_variant: bad kind");
}

}  // namespace fusion

void register_stage(ParameterStore& store, const std::string& prefix, const StageConfig& cfg,
                    int c, int d_l, int h, int w) {
    if (cfg.use_ape) {
        store.create(prefix + ".ape", {h, w, c}, Init::Uniform, c);
    }
    const bool uses_roco = cfg.variant != Variant::HoliStar;
    const bool uses_holi = cfg.variant != Variant::RocoOnly;
    if (uses_roco) {
        roco::register_params(store, prefix + ".roco", c, d_l);
        fusion::register_fuse(store, prefix + ".roco", cfg.fuse, c);
    }
    if (uses_holi) {
        holi::register_params(store, prefix + ".holi", c, d_l);
    }
    const bool with_hw = cfg.variant == Variant::RocoOnly ||
                         cfg.variant == Variant::ParallelStar ||
                         cfg.variant == Variant::ParallelGuided;
    const bool with_g = uses_holi;
    fusion::register_merge_flex(store, prefix + ".merge", c, cfg.use_ffn, with_hw, with_g);
}

StageFn compose_block(const StageConfig& cfg) {
    return [cfg](const Tensor& v, const Tensor& l, const ParameterStore& store,
                 const std::string& prefix, ForwardCtx& ctx) -> Tensor {
        Tensor vin = cfg.use_ape ? add(v, store.get(prefix + ".ape")) : v;
        Tensor hw_path, g_path;
        switch (cfg.variant) {
            case Variant::HoliStar: {
                auto hp = holi::project(vin, l, store, prefix + ".holi");
                g_path = holi::plain_attend(hp.v_g, hp.g_k, hp.g_v).v_g_all;
                break;
            }
            case Variant::RocoOnly: {
                auto ro = roco::interact(vin, l, store, prefix + ".roco");
                hw_path = fusion::fuse_variant(
                    cfg.fuse, {ro.axis.v_h, ro.axis.v_w, ro.v_h_att, ro.v_w_att, vin}, store,
                    prefix + ".roco");
                break;
            }
            case Variant::Serial: {
                auto ro = roco::interact(vin, l, store, prefix + ".roco");
                Tensor fused = fusion::fuse_variant(
                    cfg.fuse, {ro.axis.v_h, ro.axis.v_w, ro.v_h_att, ro.v_w_att, vin}, store,
                    prefix + ".roco");
                auto hp = holi::project(fused, l, store, prefix + ".holi");
                g_path = holi::plain_attend(hp.v_g, hp.g_k, hp.g_v).v_g_all;
                break;
            }
            case Variant::ParallelStar:
            case Variant::ParallelGuided: {
                auto ro = roco::interact(vin, l, store, prefix + ".roco");
                hw_path = fusion::fuse_variant(
                    cfg.fuse, {ro.axis.v_h, ro.axis.v_w, ro.v_h_att, ro.v_w_att, vin}, store,
                    prefix + ".roco");
                auto hp = holi::project(vin, l, store, prefix + ".holi");
                if (cfg.variant == Variant::ParallelGuided) {
                    g_path = holi::guided_attend(hp.v_g, hp.g_k, hp.g_v, ro.prior.mask_roco,
                                                 cfg.renorm_roho)
                                 .v_g_all;
                } else {
                    g_path = holi::plain_attend(hp.v_g, hp.g_k, hp.g_v).v_g_all;
                }
                break;
            }
        }
        return fusion::merge_flex(hw_path, g_path, vin, store, prefix + ".merge", ctx,
                                  cfg.use_ffn, cfg.dropout_p);
    };
}

}  // namespace cprn
