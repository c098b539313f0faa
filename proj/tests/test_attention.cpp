#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cprn/attention.hpp"
#include "oracles.hpp"

using namespace cprn;

namespace {

Tensor leafv(std::vector<int> shape, std::vector<real> v) {
    return Tensor::leaf(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("attend: single key returns the value row regardless of Q") {
    Rng rng(1);
    Tensor q = leafv({3, 2}, oracle::random_vec(6, rng));
    Tensor k = leafv({1, 2}, oracle::random_vec(2, rng));
    Tensor v = leafv({1, 4}, {5, 6, 7, 8});
    Tensor out = attend(q, k, v);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j)
            CHECK(out.at({i, j}) == doctest::Approx(v.data()[static_cast<size_t>(j)]).epsilon(1e-12));
}

TEST_CASE("attend: zero queries give uniform weights and the value column mean") {
    Rng rng(2);
    Tensor q = Tensor::zeros({2, 3});
    Tensor k = leafv({4, 3}, oracle::random_vec(12, rng));
    Tensor v = leafv({4, 2}, oracle::random_vec(8, rng));
    Tensor out = attend(q, k, v);
    for (int j = 0; j < 2; ++j) {
        real mean = 0;
        for (int i = 0; i < 4; ++i) mean += v.at({i, j});
        mean /= 4;
        CHECK(out.at({0, j}) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(out.at({1, j}) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("attend matches the explicit loop oracle") {
    Rng rng(3);
    for (int trial = 0; trial < 25; ++trial) {
        const int nq = rng.range(1, 5), nk = rng.range(1, 6), d = rng.range(1, 4),
                  dv = rng.range(1, 4);
        auto qv = oracle::random_vec(static_cast<long>(nq) * d, rng);
        auto kv = oracle::random_vec(static_cast<long>(nk) * d, rng);
        auto vv = oracle::random_vec(static_cast<long>(nk) * dv, rng);
        Tensor out = attend(leafv({nq, d}, qv), leafv({nk, d}, kv), leafv({nk, dv}, vv));
        CHECK(oracle::max_abs_diff(out.data(), oracle::attend(qv, kv, vv, nq, nk, d, dv)) < 1e-9);
    }
}

TEST_CASE("attend: dimension errors") {
    Tensor q = Tensor::zeros({2, 3});
    CHECK_THROWS_AS(attend(q, Tensor::zeros({4, 2}), Tensor::zeros({4, 2})), DimError);
    CHECK_THROWS_AS(attend(q, Tensor::zeros({4, 3}), Tensor::zeros({3, 2})), DimError);
}

TEST_CASE("attention scores: rows sum to 1, weights in (0,1)") {
    Rng rng(4);
    Tensor q = leafv({3, 4}, oracle::random_vec(12, rng, -2, 2));
    Tensor k = leafv({5, 4}, oracle::random_vec(20, rng, -2, 2));
    AttentionScores sc = attend_scores(q, k);
    CHECK(sc.scale == doctest::Approx(0.5).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) {
        real total = 0;
        for (int j = 0; j < 5; ++j) {
            const real w = sc.weights.at({i, j});
            CHECK(w > 0);
            CHECK(w < 1);
            total += w;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("attend: joint key/value row permutation leaves the output unchanged") {
    Rng rng(5);
    const int nk = 5;
    auto kv = oracle::random_vec(nk * 3, rng);
    auto vv = oracle::random_vec(nk * 2, rng);
    Tensor q = leafv({2, 3}, oracle::random_vec(6, rng));
    Tensor out = attend(q, leafv({nk, 3}, kv), leafv({nk, 2}, vv));

    const int perm[nk] = {3, 0, 4, 1, 2};
    std::vector<real> kp(kv.size()), vp(vv.size());
    for (int i = 0; i < nk; ++i) {
        for (int j = 0; j < 3; ++j) kp[static_cast<size_t>(i * 3 + j)] = kv[static_cast<size_t>(perm[i] * 3 + j)];
        for (int j = 0; j < 2; ++j) vp[static_cast<size_t>(i * 2 + j)] = vv[static_cast<size_t>(perm[i] * 2 + j)];
    }
    Tensor out_p = attend(q, leafv({nk, 3}, kp), leafv({nk, 2}, vp));
    CHECK(oracle::max_abs_diff(out.data(), out_p.data()) < 1e-12);
}

TEST_CASE("softmax shift invariance at the weights level") {
    Rng rng(6);
    auto lv = oracle::random_vec(4 * 6, rng, -2, 2);
    Tensor logits = leafv({4, 6}, lv);
    Tensor shifted = add_scalar(logits, real(17.5));
    CHECK(oracle::max_abs_diff(softmax(logits, 1).data(), softmax(shifted, 1).data()) < 1e-12);
}

TEST_CASE("gated_cross_attend: identities and composition oracle") {
    Rng rng(7);
    Tensor v = leafv({4, 2}, oracle::random_vec(8, rng));
    Tensor wk = leafv({3, 2}, oracle::random_vec(6, rng));
    Tensor ones = Tensor::full({3, 2}, 1);
    // all-one values: the attention output row is all ones, so gating returns v
    CHECK(oracle::max_abs_diff(gated_cross_attend(v, wk, ones).data(), v.data()) < 1e-12);

    Tensor zero = Tensor::zeros({4, 2});
    Tensor gated_zero = gated_cross_attend(zero, wk, ones);
    for (real x : gated_zero.data()) CHECK(x == 0);

    auto vv = oracle::random_vec(4 * 2, rng);
    auto kv = oracle::random_vec(3 * 2, rng);
    auto wv = oracle::random_vec(3 * 2, rng);
    Tensor out = gated_cross_attend(leafv({4, 2}, vv), leafv({3, 2}, kv), leafv({3, 2}, wv));
    auto att = oracle::attend(vv, kv, wv, 4, 3, 2, 2);
    for (size_t i = 0; i < att.size(); ++i) att[i] *= vv[i];
    CHECK(oracle::max_abs_diff(out.data(), att) < 1e-9);

    CHECK_THROWS_AS(gated_cross_attend(v, wk, Tensor::zeros({3, 3})), DimError);
}

TEST_CASE("logit counter counts q*k per attend") {
    opstats::reset_logit_count();
    Rng rng(8);
    Tensor q = leafv({3, 2}, oracle::random_vec(6, rng));
    Tensor k = leafv({5, 2}, oracle::random_vec(10, rng));
    Tensor v = leafv({5, 2}, oracle::random_vec(10, rng));
    attend(q, k, v);
    CHECK(opstats::logit_count() == 15);
    gated_cross_attend(q, k, v);  // q=3 keys=5 again
    CHECK(opstats::logit_count() == 30);
    opstats::reset_logit_count();
    CHECK(opstats::logit_count() == 0);
}

TEST_CASE("attention gradients match finite differences") {
    ParameterStore store(9);
    store.create("q", {3, 2});
    store.create("k", {4, 2});
    store.create("v", {4, 2});
    auto forward = [&] {
        Tensor out = gated_cross_attend(store.get("q"), store.get("k"), store.get("v"));
        return mean_all(mul(out, out));
    };
    CHECK(oracle::fd_check(store, forward).max_rel_err < 1e-3);
}
