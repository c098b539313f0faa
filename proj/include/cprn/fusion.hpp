#pragma once

#include <functional>
#include <string>

#include "cprn/holi.hpp"
#include "cprn/params.hpp"
#include "cprn/roco.hpp"
#include "cprn/tensor.hpp"

namespace cprn {

/// Runtime knobs threaded through a forward pass.
struct ForwardCtx {
    bool training = false;
    Rng* dropout_rng = nullptr;  // required when training and dropout_p > 0
};

/// Stage composition for the ablation matrix.
enum class Variant { HoliStar, RocoOnly, Serial, ParallelStar, ParallelGuided };

/// Alternative combinations of the axis features (CLI names eq5, f1..f4).
enum class FuseKind { Sum, F1, F2, F3, F4 };

Variant variant_from_string(const std::string& s);
std::string to_string(Variant v);
FuseKind fuse_from_string(const std::string& s);
std::string to_string(FuseKind k);

struct StageConfig {
    Variant variant = Variant::ParallelGuided;
    FuseKind fuse = FuseKind::Sum;
    bool use_ffn = true;
    bool use_ape = true;
    bool renorm_roho = false;
    real dropout_p = real(0.1);
};

namespace fusion {

struct StageOutput {
    Tensor f;  // [H x W x C]
};

void register_merge(ParameterStore& store, const std::string& prefix, int c, bool with_ffn);

/// F = V + FFN(ReLU(proj(v_hw_all)) + ReLU(proj(v_g_all))); the final FFN layer
/// is zero-initialized so each stage starts as the identity.
StageOutput merge_paths(const Tensor& v_hw_all, const Tensor& v_g_all, const Tensor& v,
                        const ParameterStore& store, const std::string& prefix,
                        ForwardCtx& ctx, real dropout_p = real(0.1));

/// Pieces the fusion variants draw from.
struct FuseParts {
    Tensor v_h, v_w;          // [H x C], [W x C]
    Tensor v_h_att, v_w_att;  // gated axis features
    Tensor v;                 // [H x W x C]
};

void register_fuse(ParameterStore& store, const std::string& prefix, FuseKind kind, int c);

Tensor fuse_variant(FuseKind kind, const FuseParts& parts, const ParameterStore& store,
                    const std::string& prefix);

}  // namespace fusion

/// A wired stage-level forward function.
using StageFn = std::function<Tensor(const Tensor& v, const Tensor& l, const ParameterStore&,
                                     const std::string& prefix, ForwardCtx&)>;

/// Register everything one stage needs under `prefix` for the given wiring.
void register_stage(ParameterStore& store, const std::string& prefix, const StageConfig& cfg,
                    int c, int d_l, int h, int w);

/// Build the stage forward function for a composition variant.
StageFn compose_block(const StageConfig& cfg);

}  // namespace cprn
