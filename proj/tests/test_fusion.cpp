#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cprn/fusion.hpp"
#include "oracles.hpp"

using namespace cprn;

namespace {

Tensor leafv(std::vector<int> shape, std::vector<real> v) {
    return Tensor::leaf(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("variant and fusion names round-trip; unknown names are config errors") {
    for (const char* name :
         {"holi_star", "roco_only", "serial", "parallel_star", "parallel_guided"}) {
        CHECK(to_string(variant_from_string(name)) == name);
    }
    for (const char* name : {"eq5", "f1", "f2", "f3", "f4"}) {
        CHECK(to_string(fuse_from_string(name)) == name);
    }
    CHECK_THROWS_AS(variant_from_string("bogus"), ConfigError);
    CHECK_THROWS_AS(fuse_from_string("f9"), ConfigError);
}

TEST_CASE("merge_paths: residual identity at initialization") {
    ParameterStore store(1);
    fusion::register_merge(store, "m", 3, true);
    Rng rng(2);
    Tensor v = leafv({2, 2, 3}, oracle::random_vec(12, rng));
    Tensor hw = leafv({2, 2, 3}, oracle::random_vec(12, rng));
    Tensor g = leafv({2, 2, 3}, oracle::random_vec(12, rng));
    ForwardCtx ctx;
    auto out = fusion::merge_paths(hw, g, v, store, "m", ctx);
    // the final FFN projection is zero-initialized, so F == V exactly
    CHECK(out.f.data() == v.data());
}

TEST_CASE("merge_paths: eval mode is deterministic") {
    ParameterStore store(3);
    fusion::register_merge(store, "m", 2, true);
    store.set_data("m.ffn2.w", {real(0.3), real(-0.1), real(0.2), real(0.4)});
    Rng rng(4);
    Tensor v = leafv({3, 2, 2}, oracle::random_vec(12, rng));
    Tensor hw = leafv({3, 2, 2}, oracle::random_vec(12, rng));
    Tensor g = leafv({3, 2, 2}, oracle::random_vec(12, rng));
    ForwardCtx ctx;
    auto a = fusion::merge_paths(hw, g, v, store, "m", ctx);
    auto b = fusion::merge_paths(hw, g, v, store, "m", ctx);
    CHECK(a.f.data() == b.f.data());
}

TEST_CASE("merge_paths: train-mode dropout equals the explicit seeded-mask oracle") {
    ParameterStore store(5);
    fusion::register_merge(store, "m", 2, true);
    store.set_data("m.ffn2.w", {real(0.5), real(0.1), real(-0.2), real(0.3)});
    store.set_data("m.ffn2.b", {real(0.05), real(-0.03)});
    Rng rng(6);
    Tensor v = leafv({4, 3, 2}, oracle::random_vec(24, rng));
    Tensor hw = leafv({4, 3, 2}, oracle::random_vec(24, rng));
    Tensor g = leafv({4, 3, 2}, oracle::random_vec(24, rng));

    const real p = real(0.25);
    Rng train_stream(777);
    ForwardCtx ctx{true, &train_stream};
    auto out = fusion::merge_paths(hw, g, v, store, "m", ctx, p);

    // replay: same ops, dropout replaced by an explicit mask from the same stream
    Tensor s = add(relu(linear(hw, store, "m.hw")), relu(linear(g, store, "m.g")));
    Tensor hidden = relu(linear(s, store, "m.ffn1"));
    Rng replay(777);
    std::vector<real> mask(static_cast<size_t>(hidden.numel()));
    const real keep = real(1) - p;
    for (auto& mv : mask) mv = replay.uniform() < keep ? real(1) / keep : real(0);
    Tensor dropped = mul(hidden, leafv({4, 3, 2}, mask));
    Tensor expected = add(v, linear(dropped, store, "m.ffn2"));
    CHECK(out.f.data() == expected.data());
}

TEST_CASE("merge_paths requires a dropout stream in training mode") {
    ParameterStore store(7);
    fusion::register_merge(store, "m", 2, true);
    Tensor v = Tensor::zeros({2, 2, 2});
    ForwardCtx ctx{true, nullptr};
    CHECK_THROWS_AS(fusion::merge_paths(v, v, v, store, "m", ctx), ConfigError);
}

TEST_CASE("fuse variants: identities") {
    ParameterStore store(8);
    Rng rng(9);
    const int h = 3, w = 4, c = 2;
    Tensor v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    fusion::FuseParts parts;
    parts.v = v;
    parts.v_h = leafv({h, c}, oracle::random_vec(h * c, rng));
    parts.v_w = leafv({w, c}, oracle::random_vec(w * c, rng));

    parts.v_h_att = Tensor::zeros({h, c});
    parts.v_w_att = Tensor::zeros({w, c});
    Tensor f1 = fusion::fuse_variant(FuseKind::F1, parts, store, "r");
    CHECK(f1.data() == v.data());

    parts.v_h_att = Tensor::full({h, c}, 1);
    parts.v_w_att = Tensor::full({w, c}, 1);
    Tensor f2 = fusion::fuse_variant(FuseKind::F2, parts, store, "r");
    CHECK(f2.data() == v.data());
}

TEST_CASE("fuse f3 matches the expand-add-concat-affine oracle") {
    ParameterStore store(10);
    fusion::register_fuse(store, "r", FuseKind::F3, 2);
    Rng rng(11);
    const int h = 3, w = 3, c = 2;
    fusion::FuseParts parts;
    parts.v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    auto vh = oracle::random_vec(h * c, rng);
    auto vw = oracle::random_vec(w * c, rng);
    auto vha = oracle::random_vec(h * c, rng);
    auto vwa = oracle::random_vec(w * c, rng);
    parts.v_h = leafv({h, c}, vh);
    parts.v_w = leafv({w, c}, vw);
    parts.v_h_att = leafv({h, c}, vha);
    parts.v_w_att = leafv({w, c}, vwa);

    Tensor out = fusion::fuse_variant(FuseKind::F3, parts, store, "r");

    std::vector<real> cat(static_cast<size_t>(h) * w * 2 * c);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int ch = 0; ch < c; ++ch) {
                cat[(static_cast<size_t>(i) * w + j) * 2 * c + ch] =
                    vh[static_cast<size_t>(i * c + ch)] + vha[static_cast<size_t>(i * c + ch)];
                cat[(static_cast<size_t>(i) * w + j) * 2 * c + c + ch] =
                    vw[static_cast<size_t>(j * c + ch)] + vwa[static_cast<size_t>(j * c + ch)];
            }
    auto expected = oracle::linear(cat, store.get("r.f3.w").data(), store.get("r.f3.b").data(),
                                   h * w, 2 * c, c);
    CHECK(oracle::max_abs_diff(out.data(), expected) < 1e-9);
}

TEST_CASE("fuse f4 keeps the stage shape and differs across inner projections") {
    ParameterStore store(12);
    fusion::register_fuse(store, "r", FuseKind::F4, 2);
    Rng rng(13);
    const int h = 2, w = 3, c = 2;
    fusion::FuseParts parts;
    parts.v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    parts.v_h = leafv({h, c}, oracle::random_vec(h * c, rng));
    parts.v_w = leafv({w, c}, oracle::random_vec(w * c, rng));
    parts.v_h_att = leafv({h, c}, oracle::random_vec(h * c, rng));
    parts.v_w_att = leafv({w, c}, oracle::random_vec(w * c, rng));
    Tensor out = fusion::fuse_variant(FuseKind::F4, parts, store, "r");
    CHECK(out.shape() == std::vector<int>{h, w, c});
}

TEST_CASE("all fuse variants produce identical shapes for identical parts") {
    ParameterStore store(14);
    fusion::register_fuse(store, "r", FuseKind::F3, 3);
    fusion::register_fuse(store, "r", FuseKind::F4, 3);
    Rng rng(15);
    const int h = 4, w = 5, c = 3;
    fusion::FuseParts parts;
    parts.v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    parts.v_h = leafv({h, c}, oracle::random_vec(h * c, rng));
    parts.v_w = leafv({w, c}, oracle::random_vec(w * c, rng));
    parts.v_h_att = leafv({h, c}, oracle::random_vec(h * c, rng));
    parts.v_w_att = leafv({w, c}, oracle::random_vec(w * c, rng));
    for (FuseKind k : {FuseKind::Sum, FuseKind::F1, FuseKind::F2, FuseKind::F3, FuseKind::F4}) {
        CHECK(fusion::fuse_variant(k, parts, store, "r").shape() == std::vector<int>{h, w, c});
    }
}

TEST_CASE("compose parallel_guided + ffn + ape is bitwise identical to the hand-wired model") {
    StageConfig cfg;
    cfg.variant = Variant::ParallelGuided;
    cfg.fuse = FuseKind::Sum;
    cfg.use_ffn = true;
    cfg.use_ape = true;
    const int h = 4, w = 4, c = 3, t = 3, d_l = 3;

    ParameterStore store(16);
    register_stage(store, "st", cfg, c, d_l, h, w);
    Rng rng(17);
    Tensor v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    Tensor l = leafv({t, d_l}, oracle::random_vec(t * d_l, rng));

    ForwardCtx ctx;
    Tensor composed = compose_block(cfg)(v, l, store, "st", ctx);

    // hand-wired pipeline with the same operation order
    Tensor vin = add(v, store.get("st.ape"));
    auto ro = roco::interact(vin, l, store, "st.roco");
    Tensor hw_path = fusion::fuse_variant(
        FuseKind::Sum, {ro.axis.v_h, ro.axis.v_w, ro.v_h_att, ro.v_w_att, vin}, store, "st.roco");
    auto hp = holi::project(vin, l, store, "st.holi");
    Tensor g_path = holi::guided_attend(hp.v_g, hp.g_k, hp.g_v, ro.prior.mask_roco).v_g_all;
    Tensor s = add(relu(linear(hw_path, store, "st.merge.hw")),
                   relu(linear(g_path, store, "st.merge.g")));
    Tensor hidden = relu(linear(s, store, "st.merge.ffn1"));
    Tensor expected = add(vin, linear(hidden, store, "st.merge.ffn2"));

    CHECK(composed.data() == expected.data());
}

TEST_CASE("compose holi_star uses only the unguided holistic path") {
    StageConfig cfg;
    cfg.variant = Variant::HoliStar;
    cfg.use_ffn = false;
    cfg.use_ape = false;
    const int h = 3, w = 3, c = 2, t = 2;
    ParameterStore store(18);
    register_stage(store, "st", cfg, c, 2, h, w);
    CHECK_FALSE(store.has("st.roco.h_proj.w"));  // no axis path registered
    CHECK_FALSE(store.has("st.merge.hw.w"));
    Rng rng(19);
    Tensor v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    Tensor l = leafv({t, 2}, oracle::random_vec(t * 2, rng));
    ForwardCtx ctx;
    Tensor composed = compose_block(cfg)(v, l, store, "st", ctx);

    auto hp = holi::project(v, l, store, "st.holi");
    Tensor g_path = holi::plain_attend(hp.v_g, hp.g_k, hp.g_v).v_g_all;
    Tensor expected = add(v, relu(linear(g_path, store, "st.merge.g")));
    CHECK(composed.data() == expected.data());
}

TEST_CASE("compose serial feeds the axis-fused map into the holistic module") {
    StageConfig cfg;
    cfg.variant = Variant::Serial;
    cfg.use_ffn = false;
    cfg.use_ape = false;
    const int h = 3, w = 4, c = 2, t = 2;
    ParameterStore store(20);
    register_stage(store, "st", cfg, c, 2, h, w);
    Rng rng(21);
    Tensor v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    Tensor l = leafv({t, 2}, oracle::random_vec(t * 2, rng));
    ForwardCtx ctx;
    Tensor composed = compose_block(cfg)(v, l, store, "st", ctx);

    auto ro = roco::interact(v, l, store, "st.roco");
    Tensor fused = fusion::fuse_variant(
        FuseKind::Sum, {ro.axis.v_h, ro.axis.v_w, ro.v_h_att, ro.v_w_att, v}, store, "st.roco");
    auto hp = holi::project(fused, l, store, "st.holi");
    Tensor g_path = holi::plain_attend(hp.v_g, hp.g_k, hp.g_v).v_g_all;
    Tensor expected = add(v, relu(linear(g_path, store, "st.merge.g")));
    CHECK(composed.data() == expected.data());
}

TEST_CASE("stage gradients: full parallel-guided block at toy size") {
    StageConfig cfg;
    cfg.variant = Variant::ParallelGuided;
    cfg.use_ffn = true;
    cfg.use_ape = true;
    cfg.dropout_p = 0;  // keep the check deterministic
    const int h = 2, w = 2, c = 2, t = 2, d_l = 2;
    ParameterStore store(22);
    register_stage(store, "st", cfg, c, d_l, h, w);
    // perturb the zero-initialized layer so its gradient path is exercised
    store.set_data("st.merge.ffn2.w", {real(0.1), real(-0.2), real(0.3), real(0.05)});
    Rng rng(23);
    Tensor v = leafv({h, w, c}, oracle::random_vec(static_cast<long>(h) * w * c, rng));
    Tensor l = leafv({t, d_l}, oracle::random_vec(t * d_l, rng));
    auto fn = compose_block(cfg);
    auto forward = [&] {
        ForwardCtx ctx;
        Tensor f = fn(v, l, store, "st", ctx);
        return mean_all(mul(f, f));
    };
    CHECK(oracle::fd_check(store, forward).max_rel_err < 1e-3);
}
