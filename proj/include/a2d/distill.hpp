#pragma once

#include <optional>
#include <string>
#include <vector>

#include "a2d/tensor.hpp"
#include "a2d/transformer.hpp"

namespace a2d {

// Alignment weights of one attention stack: each of the C output channels is
// a learned mixture of the in_channels student maps plus a bias, i.e. a 1x1
// convolution over maps treated as channels.
struct AamParams {
    Tensor w;  // [C, in_channels]
    Tensor b;  // [C]
    int in_channels = 0;   // student heads-per-layer * layers (or layers, layerwise)
    int out_channels = 0;  // total teacher heads of the stack

    // w filled with 1/in_channels, b zero: every initial intermediate map is
    // the mean of the student maps and so a valid distribution.
    static AamParams uniform_init(int in_channels, int out_channels);
    std::size_t trainable_count() const { return w.size() + b.size(); }
};

struct AamSet {
    std::optional<AamParams> enc_self;
    std::optional<AamParams> dec_self;
    std::optional<AamParams> dec_cross;
};

struct DistillConfig {
    double lambda_att = 1.0;  // weight on the attention-transfer loss
    double mu_kd = 1.0;       // weight on the response KD loss
    double lambda_decay = 0.9;
    double kd_temperature = 1.0;
    bool apply_enc_self = true;
    bool apply_dec_self = true;
    bool apply_dec_cross = true;
    bool layerwise_variant = false;
    bool renormalize_intermediate = false;

    void validate() const;
    bool any_stack() const { return apply_enc_self || apply_dec_self || apply_dec_cross; }
};

// H^I_c = sum_j w[c, j] * student_maps[j] + b_c for c in [0, C). Input order
// is layer-major, head-minor. Differentiable in w, b, and the maps.
std::vector<Tensor> aam_forward(const std::vector<Tensor>& student_maps, const AamParams& aam);

// sum_c over the stack of the row-mean KL(teacher_c || intermediate_c); rows
// with row_mask 0 (padding queries) are excluded. Teacher maps must already
// be detached constants.
Tensor attention_transfer_loss(const std::vector<Tensor>& teacher_maps,
                               const std::vector<Tensor>& intermediate_maps,
                               const Tensor& row_mask);

struct AttLossParts {
    double enc_self = 0.0;
    double dec_self = 0.0;
    double dec_cross = 0.0;
};

// enc + 1/2 (dec_self + dec_cross) over the enabled stacks; when exactly one
// decoder stack is enabled its coefficient rises to 1. Throws ConfigError if
// no stack is enabled.
Tensor combined_attention_loss(const AttentionMapSet& teacher_maps,
                               const AttentionMapSet& student_maps, const AamSet& aams,
                               const DistillConfig& cfg, const Tensor& src_row_mask,
                               const Tensor& tgt_row_mask, AttLossParts* parts = nullptr);

// -sum p^T log p^S with both sides tempered by T, scaled by T^2, averaged
// over non-pad target positions. teacher_logits is a constant.
Tensor vanilla_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                       const Tensor& tgt_row_mask, double temperature);

// Head-mean of each layer's maps; input is a full stack (layers * heads
// maps), output has one map per layer. Means of distributions stay on the
// simplex, so no renormalization is applied.
std::vector<Tensor> layerwise_maps(const std::vector<Tensor>& maps, int n_heads);

// Trainable size of one stack's AAM: M*N*C weights + C biases.
std::size_t aam_param_count(int m_heads, int n_layers, int c_teacher);

struct LossMetrics {
    double ce = 0.0;
    double att_enc_self = 0.0;
    double att_dec_self = 0.0;
    double att_dec_cross = 0.0;
    double kd = 0.0;
    double total = 0.0;
};

// L = L_CE + lambda * L_att + mu * L_KD on one batch. The teacher pass runs
// detached with dropout off; lambda_now comes from the schedule. Stacks or
// terms with zero weight are skipped entirely, so lambda = mu = 0 computes
// exactly the plain cross-entropy pipeline.
std::pair<Tensor, LossMetrics> total_loss(const Batch& batch, TransformerModel& student,
                                          TransformerModel& teacher, AamSet& aams,
                                          const DistillConfig& cfg, double lambda_now,
                                          bool training = true,
                                          std::mt19937_64* dropout_rng = nullptr);

// Cross-entropy of logits against tgt_out with PAD ignored; the lambda=mu=0
// path and teacher pretraining both use this.
Tensor task_cross_entropy(const Tensor& logits, const Batch& batch);

// AAM channel geometry for a teacher/student stack pair under cfg.
AamParams make_stack_aam(int student_layers, int student_heads, int teacher_layers,
                         int teacher_heads, bool layerwise);

// Builds the AAMs required by cfg for this model pair.
AamSet make_aams(const ModelConfig& student, const ModelConfig& teacher,
                 const DistillConfig& cfg);

}  // namespace a2d
