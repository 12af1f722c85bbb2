#include "a2d/train.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "a2d/error.hpp"
#include "a2d/eval.hpp"
#include "a2d/ops.hpp"

namespace a2d {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
}

double lambda_schedule(double lambda0, double decay, int epoch) {
    if (epoch < 0) throw ConfigError("lambda_schedule: epoch must be >= 0");
    return lambda0 * std::pow(decay, epoch);
}

double warmup_lr(double base_lr, int warmup_steps, long step) {
    if (warmup_steps <= 0) return base_lr;
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup_steps);
    return base_lr * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s / (w * std::sqrt(w)));
}

Adam::Adam(std::vector<std::pair<std::string, Tensor>> params, const TrainConfig& cfg)
    : lr_(cfg.learning_rate),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      warmup_(cfg.warmup_steps) {
    for (auto& [name, t] : params)
        slots_.push_back({name, t, std::vector<double>(t.size(), 0.0),
                          std::vector<double>(t.size(), 0.0)});
}

void Adam::step() {
    ++step_count_;
    const double lr_t = warmup_lr(lr_, warmup_, step_count_);
    last_lr_ = lr_t;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (Slot& s : slots_) {
        double* p = s.param.data().data();
        const bool has = s.param.has_grad();
        const std::vector<double>& g = s.param.grad_view();
        for (std::size_t i = 0; i < s.m.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            if (!std::isfinite(gi))
                throw std::runtime_error("non-finite gradient in parameter '" + s.name + "'");
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * gi;
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * gi * gi;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p[i] -= lr_t * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

double clip_global_norm(std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, t] : params) {
        if (!t.has_grad()) continue;
        for (double g : t.grad_view()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& [name, t] : params) {
            if (!t.has_grad()) continue;
            for (double& g : t.grad()) g *= f;
        }
    }
    return norm;
}

std::string epoch_record_json(const EpochRecord& r) {
    nlohmann::json j{{"epoch", r.epoch},
                     {"l_ce", r.l_ce},
                     {"l_att_enc", r.l_att_enc},
                     {"l_att_dec_self", r.l_att_dec_self},
                     {"l_att_dec_cross", r.l_att_dec_cross},
                     {"l_kd", r.l_kd},
                     {"lambda", r.lambda},
                     {"val_acc", r.val_acc},
                     {"val_bleu", r.val_bleu}};
    return j.dump();
}

namespace {

struct Snapshot {
    std::vector<std::vector<double>> values;
    void capture(const std::vector<std::pair<std::string, Tensor>>& params) {
        values.clear();
        for (const auto& [name, t] : params) values.push_back(t.data());
    }
    void restore(std::vector<std::pair<std::string, Tensor>>& params) const {
        for (std::size_t i = 0; i < params.size(); ++i) params[i].second.data() = values[i];
    }
};

struct ValidScore {
    double acc = 0.0;
    double bleu = 0.0;
};

ValidScore validate_model(TransformerModel& model, const std::vector<Batch>& valid_batches,
                          const ParallelCorpus& valid_set, const Vocab& vocab) {
    NoGradGuard ng;
    ValidScore score;
    // teacher-forced token accuracy
    std::size_t correct = 0, counted = 0;
    for (const Batch& b : valid_batches) {
        ForwardResult fwd = model.forward(b, false, false, nullptr);
        const std::size_t v = fwd.logits.dim(2);
        const double* xd = fwd.logits.data().data();
        std::size_t row = 0;
        for (const auto& trow : b.tgt_out_ids)
            for (int t : trow) {
                if (t != Vocab::kPad) {
                    const double* xr = xd + row * v;
                    std::size_t best = 0;
                    for (std::size_t j = 1; j < v; ++j)
                        if (xr[j] > xr[best]) best = j;
                    ++counted;
                    if (static_cast<int>(best) == t) ++correct;
                }
                ++row;
            }
    }
    score.acc = counted ? static_cast<double>(correct) / static_cast<double>(counted) : 0.0;

    // greedy-decode BLEU
    std::vector<std::vector<int>> srcs, refs;
    std::size_t max_ref = 0;
    for (const SentencePair& p : valid_set.pairs) {
        std::vector<int> s, r;
        for (const auto& tok : p.src) s.push_back(vocab.id(tok));
        for (const auto& tok : p.tgt) r.push_back(vocab.id(tok));
        max_ref = std::max(max_ref, r.size());
        srcs.push_back(std::move(s));
        refs.push_back(std::move(r));
    }
    const int max_steps = static_cast<int>(
        std::min<std::size_t>(max_ref + 5, static_cast<std::size_t>(model.config().max_len)));
    auto hyps = greedy_decode_batch(model, srcs, max_steps);
    score.bleu = corpus_bleu(hyps, refs).score;
    return score;
}

}  // namespace

TrainOutcome run_training(TransformerModel& model, TransformerModel* teacher, AamSet* aams,
                          const DistillConfig* dcfg, const TrainConfig& tcfg,
                          const ParallelCorpus& train_set, const ParallelCorpus& valid_set,
                          const Vocab& vocab, std::ostream* metrics_out) {
    tcfg.validate();
    if (dcfg) dcfg->validate();
    if (vocab.size() != model.config().vocab_size)
        throw ConfigError("run_training: vocab size " + std::to_string(vocab.size()) +
                          " != model vocab " + std::to_string(model.config().vocab_size));

    std::vector<std::pair<std::string, Tensor>> opt_params = model.parameters();
    if (aams) {
        auto push = [&](const char* stack, std::optional<AamParams>& p) {
            if (!p) return;
            opt_params.emplace_back("aam." + std::string(stack) + ".w", p->w);
            opt_params.emplace_back("aam." + std::string(stack) + ".b", p->b);
        };
        push("enc_self", aams->enc_self);
        push("dec_self", aams->dec_self);
        push("dec_cross", aams->dec_cross);
    }
    Adam opt(opt_params, tcfg);

    const std::size_t max_len = static_cast<std::size_t>(model.config().max_len);
    std::vector<Batch> valid_batches =
        batchify(valid_set, static_cast<std::size_t>(tcfg.batch_size), vocab, 0, max_len);
    std::mt19937_64 dropout_rng(splitmix64(tcfg.seed ^ 0xDD));

    TrainOutcome outcome;
    Snapshot best;
    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lambda_now =
            dcfg ? lambda_schedule(dcfg->lambda_att, dcfg->lambda_decay, epoch) : 0.0;
        std::vector<Batch> batches =
            batchify(train_set, static_cast<std::size_t>(tcfg.batch_size), vocab,
                     splitmix64(tcfg.seed + static_cast<std::uint64_t>(epoch) + 1), max_len);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lambda = lambda_now;
        for (Batch& batch : batches) {
            opt.zero_grad();
            Tensor loss;
            if (teacher) {
                auto [l, metrics] =
                    total_loss(batch, model, *teacher, *aams, *dcfg, lambda_now, true,
                               &dropout_rng);
                loss = l;
                rec.l_ce += metrics.ce;
                rec.l_att_enc += metrics.att_enc_self;
                rec.l_att_dec_self += metrics.att_dec_self;
                rec.l_att_dec_cross += metrics.att_dec_cross;
                rec.l_kd += metrics.kd;
            } else {
                ForwardResult fwd = model.forward(batch, false, true, &dropout_rng);
                loss = task_cross_entropy(fwd.logits, batch);
                rec.l_ce += loss.item();
            }
            backward(loss);
            if (tcfg.grad_clip_norm > 0.0) clip_global_norm(opt_params, tcfg.grad_clip_norm);
            opt.step();
        }
        const double nb = static_cast<double>(batches.size());
        rec.l_ce /= nb;
        rec.l_att_enc /= nb;
        rec.l_att_dec_self /= nb;
        rec.l_att_dec_cross /= nb;
        rec.l_kd /= nb;

        ValidScore score = validate_model(model, valid_batches, valid_set, vocab);
        rec.val_acc = score.acc;
        rec.val_bleu = score.bleu;
        outcome.log.push_back(rec);
        if (metrics_out) (*metrics_out) << epoch_record_json(rec) << "\n";

        if (score.acc > outcome.best_val_acc ||
            (score.acc == outcome.best_val_acc && score.bleu > outcome.best_val_bleu)) {
            outcome.best_val_acc = score.acc;
            outcome.best_val_bleu = score.bleu;
            outcome.best_epoch = epoch;
            best.capture(opt_params);
        }
    }
    if (outcome.best_epoch >= 0) best.restore(opt_params);
    return outcome;
}

DistillRunResult distill_run(const Checkpoint& teacher_ckpt, ModelConfig student_cfg,
                             const DistillConfig& dcfg, const TrainConfig& tcfg,
                             const ParallelCorpus& train_set, const ParallelCorpus& valid_set,
                             std::ostream* metrics_out) {
    dcfg.validate();
    TransformerModel teacher = model_from_checkpoint(teacher_ckpt);
    teacher.set_trainable(false);
    Vocab vocab = vocab_from_checkpoint(teacher_ckpt);

    // teacher and student must share one vocabulary; reject corpora that
    // fall outside it rather than silently mapping to UNK
    for (const ParallelCorpus* corpus : {&train_set, &valid_set})
        for (const SentencePair& p : corpus->pairs)
            for (const auto* side : {&p.src, &p.tgt})
                for (const std::string& tok : *side)
                    if (vocab.id(tok) == Vocab::kUnk)
                        throw ConfigError("corpus token '" + tok +
                                          "' is not in the teacher vocabulary");

    student_cfg.vocab_size = vocab.size();
    TransformerModel student(student_cfg, tcfg.seed);

    AamSet aams;
    if (dcfg.lambda_att > 0.0 && dcfg.any_stack())
        aams = make_aams(student_cfg, teacher.config(), dcfg);

    const double teacher_sum_before = params_checksum(teacher.parameters());
    TrainOutcome outcome =
        run_training(student, &teacher, &aams, &dcfg, tcfg, train_set, valid_set, vocab,
                     metrics_out);
    if (params_checksum(teacher.parameters()) != teacher_sum_before)
        throw std::runtime_error("internal: teacher parameters drifted during distillation");

    DistillRunResult res;
    res.student_ckpt = checkpoint_from_model(student, vocab);
    append_aams(res.student_ckpt, aams, dcfg.layerwise_variant);
    if (res.student_ckpt.has_aam())
        res.student_ckpt.teacher = {teacher.config().n_heads, teacher.config().n_enc_layers,
                                    teacher.config().n_dec_layers};
    res.outcome = std::move(outcome);
    return res;
}

}  // namespace a2d
