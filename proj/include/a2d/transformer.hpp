#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "a2d/data.hpp"
#include "a2d/ops.hpp"
#include "a2d/tensor.hpp"

namespace a2d {

struct ModelConfig {
    int n_enc_layers = 2;
    int n_dec_layers = 2;
    int n_heads = 4;
    int d_model = 32;
    int d_ffn = 64;
    int vocab_size = 0;
    int max_len = 64;
    double dropout_rate = 0.1;

    int d_head() const { return d_model / n_heads; }
    void validate() const;
};

// Every per-head post-softmax map of one forward pass, layer-major then
// head-minor within each stack. enc_self maps are [B, L_src, L_src],
// dec_self [B, L_tgt, L_tgt] (causal), dec_cross [B, L_tgt, L_src]: rows are
// target-query distributions over source keys.
struct AttentionMapSet {
    std::vector<Tensor> enc_self;
    std::vector<Tensor> dec_self;
    std::vector<Tensor> dec_cross;
};

struct MhaParams {
    struct Head {
        Tensor wq, wk, wv;  // [d_model, d_head] each
    };
    std::vector<Head> heads;
    Tensor wo;  // [d_model, d_model]
};

struct MhaResult {
    Tensor out;                // [B, L_q, d_model]
    std::vector<Tensor> maps;  // n_heads tensors [B, L_q, L_kv]
};

// Scaled dot-product attention over explicit per-head projections. The maps
// returned are the same graph nodes multiplied with V, so gradient reaches
// them from the task loss and from any loss applied to the maps directly.
MhaResult multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const MhaParams& params,
                               const Tensor& attn_mask);

struct ForwardResult {
    Tensor logits;  // [B, L_tgt, vocab]
    AttentionMapSet maps;
};

class TransformerModel {
  public:
    TransformerModel(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }

    // Post-norm encoder-decoder pass. Dropout fires only when training and
    // an rng is supplied; map collection is independent of training mode.
    ForwardResult forward(const Batch& batch, bool collect_maps = false, bool training = false,
                          std::mt19937_64* dropout_rng = nullptr);

    Tensor encode(const std::vector<std::vector<int>>& src_ids, const Tensor& src_mask,
                  bool training, std::mt19937_64* rng, AttentionMapSet* maps);
    Tensor decode(const std::vector<std::vector<int>>& tgt_in_ids, const Tensor& tgt_mask,
                  const Tensor& enc_out, const Tensor& src_mask, bool training,
                  std::mt19937_64* rng, AttentionMapSet* maps);

    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor parameter(const std::string& name) const;
    std::size_t param_count() const;
    void set_trainable(bool trainable);

    // Closed form the construction must match:
    //   V*d (embedding)
    // + n_enc * (4*d^2 + 4*d + 2*d*f + f + d)          per encoder layer
    // + n_dec * (8*d^2 + 6*d + 2*d*f + f + d)          per decoder layer
    // + d*V + V                                        output projection
    // where attention projections carry no bias (Q = X W_q) and each of the
    // 2 (encoder) / 3 (decoder) layer norms holds gain+bias of size d.
    static std::size_t expected_param_count(const ModelConfig& cfg);

  private:
    struct LayerNormParams {
        Tensor gain, bias;
    };
    struct FfnParams {
        Tensor w1, b1, w2, b2;
    };
    struct EncLayer {
        MhaParams self;
        LayerNormParams ln1;
        FfnParams ffn;
        LayerNormParams ln2;
    };
    struct DecLayer {
        MhaParams self;
        LayerNormParams ln1;
        MhaParams cross;
        LayerNormParams ln2;
        FfnParams ffn;
        LayerNormParams ln3;
    };

    Tensor embed_sequence(const std::vector<std::vector<int>>& ids, bool training,
                          std::mt19937_64* rng);
    Tensor ffn_block(const Tensor& x, const FfnParams& p);
    Tensor maybe_dropout(const Tensor& x, bool training, std::mt19937_64* rng);

    ModelConfig cfg_;
    Tensor embed_;  // [vocab, d_model], shared by source and target sides
    std::vector<EncLayer> enc_;
    std::vector<DecLayer> dec_;
    Tensor out_w_, out_b_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

// Attention masks built from 0/1 validity rows. Queries and keys are both
// masked, so padding query rows come out of softmax all zero.
Tensor self_attn_mask(const Tensor& valid, bool causal);            // [B,L] -> [B,L,L]
Tensor cross_attn_mask(const Tensor& q_valid, const Tensor& k_valid);  // -> [B,Lq,Lk]

// Autoregressive argmax decode from BOS until EOS or max_steps. Returns
// generated content ids (BOS/EOS stripped).
std::vector<int> greedy_decode(TransformerModel& model, const std::vector<int>& src_ids,
                               int max_steps);

// Batched variant used for corpus evaluation; one encoder pass per batch.
std::vector<std::vector<int>> greedy_decode_batch(TransformerModel& model,
                                                  const std::vector<std::vector<int>>& src_ids,
                                                  int max_steps);

double params_checksum(const std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace a2d
