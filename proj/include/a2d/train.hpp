#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "a2d/checkpoint.hpp"
#include "a2d/data.hpp"
#include "a2d/distill.hpp"
#include "a2d/tensor.hpp"
#include "a2d/transformer.hpp"

namespace a2d {

struct TrainConfig {
    int epochs = 10;
    int batch_size = 32;
    double learning_rate = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    int warmup_steps = 0;       // 0 = constant learning rate
    double grad_clip_norm = 1.0;  // <= 0 disables clipping
    std::uint64_t seed = 1;

    void validate() const;
};

// lambda0 * decay^epoch.
double lambda_schedule(double lambda0, double decay, int epoch);

// Inverse-sqrt warmup normalized to peak at base_lr when step == warmup:
// base_lr * sqrt(warmup) * min(step^-1/2, step * warmup^-3/2). Without
// warmup the rate is constant.
double warmup_lr(double base_lr, int warmup_steps, long step);

class Adam {
  public:
    Adam(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg);

    // Bias-corrected update from the grads currently on the parameters.
    // Throws on NaN gradients, naming the parameter.
    void step();
    void zero_grad();
    long steps() const { return step_count_; }
    double last_lr() const { return last_lr_; }

  private:
    struct Slot {
        std::string name;
        Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    int warmup_;
    long step_count_ = 0;
    double last_lr_ = 0.0;
};

// Scales grads so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::vector<std::pair<std::string, Tensor>>& params, double max_norm);

struct EpochRecord {
    int epoch = 0;
    double l_ce = 0.0;
    double l_att_enc = 0.0;
    double l_att_dec_self = 0.0;
    double l_att_dec_cross = 0.0;
    double l_kd = 0.0;
    double lambda = 0.0;
    double val_acc = 0.0;
    double val_bleu = 0.0;
};

std::string epoch_record_json(const EpochRecord& r);

struct TrainOutcome {
    std::vector<EpochRecord> log;
    int best_epoch = -1;
    double best_val_acc = -1.0;
    double best_val_bleu = -1.0;
};

// Trains `model` in place; on return the best-validation parameters (token
// accuracy, BLEU tiebreak) are restored into the model and AAMs. When
// `teacher` is null the loop is plain cross-entropy training; otherwise it
// optimizes CE + lambda*att + mu*KD jointly over the student and
// the AAMs. metrics_out, when given, receives one NDJSON record per epoch.
TrainOutcome run_training(TransformerModel& model, TransformerModel* teacher, AamSet* aams,
                          const DistillConfig* dcfg, const TrainConfig& tcfg,
                          const ParallelCorpus& train_set, const ParallelCorpus& valid_set,
                          const Vocab& vocab, std::ostream* metrics_out = nullptr);

struct DistillRunResult {
    Checkpoint student_ckpt;  // trained student weights + AAM params
    TrainOutcome outcome;
};

// Full distillation pipeline against a loaded teacher checkpoint: verifies
// the corpus fits the shared vocabulary, trains student + AAMs, packages the
// result. student_cfg.vocab_size is filled from the teacher's vocab.
DistillRunResult distill_run(const Checkpoint& teacher_ckpt, ModelConfig student_cfg,
                             const DistillConfig& dcfg, const TrainConfig& tcfg,
                             const ParallelCorpus& train_set, const ParallelCorpus& valid_set,
                             std::ostream* metrics_out = nullptr);

}  // namespace a2d
