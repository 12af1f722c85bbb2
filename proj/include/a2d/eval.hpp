#pragma once

#include <array>
#include <string>
#include <vector>

#include "a2d/tensor.hpp"

namespace a2d {

struct BleuResult {
    double score = 0.0;  // 0..100
    std::array<double, 4> precisions{};
    double brevity_penalty = 1.0;
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
};

// Corpus-level BLEU-4: geometric mean of modified n-gram precisions times
// the brevity penalty. Precisions whose match count is zero get add-one
// smoothing, which short toy sentences need; scores are therefore comparable
// only between runs of this implementation.
BleuResult corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                       const std::vector<std::vector<int>>& references, int max_n = 4);
BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references, int max_n = 4);

// Fraction of non-pad target positions where argmax(logits) == target.
// logits [B, L, V] or [N, V]; targets flattened row-major to match. All-pad
// input is defined as 0.0 with a warning on stderr.
double token_accuracy(const Tensor& logits, const std::vector<std::vector<int>>& targets,
                      int pad_id);
// Decoded-sequence variant: position-wise comparison, counted over reference
// lengths (missing hypothesis positions count as wrong).
double token_accuracy(const std::vector<std::vector<int>>& decodes,
                      const std::vector<std::vector<int>>& references, int pad_id);

}  // namespace a2d
