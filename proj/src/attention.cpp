#include "cprn/attention.hpp"

#include <cmath>

namespace cprn {

namespace opstats {
namespace {
thread_local std::uint64_t t_logits = 0;
}
void reset_logit_count() { t_logits = 0; }
std::uint64_t logit_count() { return t_logits; }
void count_logits(std::uint64_t n) { t_logits += n; }
}  // namespace opstats

AttentionScores attend_scores(const Tensor& q, const Tensor& k) {
    if (q.rank() != 2 || k.rank() != 2) {
        throw DimError("attend: Q and K must be rank-2");
    }
    if (q.dim(1) != k.dim(1)) {
        throw DimError("attend: Q/K feature extents differ");
    }
    const real scale = real(1) / std::sqrt(static_cast<real>(q.dim(1)));
    Tensor logits = mul_scalar(matmul(q, transpose2d(k)), scale);
    opstats::count_logits(static_cast<std::uint64_t>(q.dim(0)) * static_cast<std::uint64_t>(k.dim(0)));
    return AttentionScores{logits, softmax(logits, 1), scale};
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (v.rank() != 2 || k.dim(0) != v.dim(0)) {
        throw DimError("attend: K and V must agree on the key count");
    }
    return matmul(attend_scores(q, k).weights, v);
}

Tensor gated_cross_attend(const Tensor& v, const Tensor& word_k, const Tensor& word_v) {
    if (v.rank() != 2 || word_v.rank() != 2 || v.dim(1) != word_v.dim(1)) {
        throw DimError("gated_cross_attend: channel extents must match");
    }
    return mul(attend(v, word_k, word_v), v);
}

}  // namespace cprn
