#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "a2d/tensor.hpp"

namespace a2d {

// Token ids 0..3 are reserved; content tokens start at kReserved.
struct Vocab {
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kReserved = 4;

    std::vector<std::string> id_to_token;  // includes the 4 reserved entries
    std::unordered_map<std::string, int> token_to_id;

    Vocab();
    explicit Vocab(const std::vector<std::string>& content_tokens);

    int size() const { return static_cast<int>(id_to_token.size()); }
    int id(const std::string& token) const;  // kUnk when unknown
    const std::string& token(int id) const;
    std::vector<std::string> content_tokens() const;

    // One content token per line; line number = id - kReserved.
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);
};

struct SentencePair {
    std::vector<std::string> src;
    std::vector<std::string> tgt;
};

struct ParallelCorpus {
    std::vector<SentencePair> pairs;
    std::string split = "train";

    bool empty() const { return pairs.empty(); }
    std::size_t size() const { return pairs.size(); }
};

// One padded minibatch shared by teacher and student. Masks are 0/1 tensors
// of shape [batch, len]; mask[i][j] == 1 exactly where ids[i][j] != PAD.
struct Batch {
    std::vector<std::vector<int>> src_ids;     // [B, L_src]
    std::vector<std::vector<int>> tgt_in_ids;  // [B, L_tgt], BOS-prefixed
    std::vector<std::vector<int>> tgt_out_ids; // [B, L_tgt], EOS-suffixed
    Tensor src_mask;                           // [B, L_src]
    Tensor tgt_mask;                           // [B, L_tgt]

    std::size_t batch_size() const { return src_ids.size(); }
    std::size_t src_len() const { return src_ids.empty() ? 0 : src_ids[0].size(); }
    std::size_t tgt_len() const { return tgt_in_ids.empty() ? 0 : tgt_in_ids[0].size(); }
};

// UTF-8, one pair per line, exactly one TAB between source and target,
// whitespace tokenization. Malformed lines raise InputError with the line
// number; an empty file yields an empty corpus with a warning on stderr.
ParallelCorpus load_parallel_tsv(const std::string& path);

enum class SynthKind { Copy, Reverse, DigitMap };
SynthKind synth_kind_from_name(const std::string& name);

// Deterministic toy corpora. Content tokens are "w0".."w{vocab_size-1}";
// digit_map applies a fixed token bijection shared by every split of the
// same vocab_size.
ParallelCorpus synth_task(SynthKind kind, std::size_t n_pairs, std::size_t min_len,
                          std::size_t max_len, std::size_t vocab_size, std::uint64_t seed);

// Vocab over all tokens appearing in the corpus, in first-appearance order.
Vocab vocab_from_corpus(const ParallelCorpus& corpus);

// Shuffles pairs (Fisher-Yates under shuffle_seed; pass 0 to keep order),
// pads each batch to its own max lengths, and applies the BOS/EOS shift:
// tgt_in = [BOS, y...], tgt_out = [y..., EOS].
std::vector<Batch> batchify(const ParallelCorpus& corpus, std::size_t batch_size,
                            const Vocab& vocab, std::uint64_t shuffle_seed,
                            std::size_t max_len);

}  // namespace a2d
