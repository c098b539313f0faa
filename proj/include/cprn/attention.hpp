#pragma once

#include <cstdint>

#include "cprn/tensor.hpp"

namespace cprn {

/// Counts scaled dot-product logits as they are materialized, so the
/// axis-factored vs holistic cost split can be asserted exactly.
namespace opstats {
void reset_logit_count();
std::uint64_t logit_count();
void count_logits(std::uint64_t n);
}  // namespace opstats

struct AttentionScores {
    Tensor logits;   // [q x k], already scaled
    Tensor weights;  // [q x k], rows sum to 1
    real scale;      // 1/sqrt(d_k)
};

/// softmax(Q K^T / sqrt(d)) over the key axis.
AttentionScores attend_scores(const Tensor& q, const Tensor& k);

/// Scaled dot-product attention: attend_scores(Q, K).weights * V.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v);

/// attend(v, word_k, word_v) gated back onto v by elementwise multiplication.
Tensor gated_cross_attend(const Tensor& v, const Tensor& word_k, const Tensor& word_v);

}  // namespace cprn
