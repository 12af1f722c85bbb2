#include "a2d/distill.hpp"

#include <cmath>

#include "a2d/error.hpp"
#include "a2d/ops.hpp"

namespace a2d {

void DistillConfig::validate() const {
    if (!(lambda_att >= 0.0) || !(mu_kd >= 0.0) || !std::isfinite(lambda_att) ||
        !std::isfinite(mu_kd))
        throw ConfigError("distill: lambda and mu must be finite and >= 0");
    if (lambda_decay <= 0.0 || lambda_decay > 1.0)
        throw ConfigError("distill: lambda_decay must be in (0, 1]");
    if (kd_temperature <= 0.0) throw ConfigError("distill: kd_temperature must be > 0");
}

AamParams AamParams::uniform_init(int in_channels, int out_channels) {
    if (in_channels < 1 || out_channels < 1)
        throw ConfigError("aam: channel counts must be positive");
    AamParams p;
    p.in_channels = in_channels;
    p.out_channels = out_channels;
    p.w = Tensor::full(
        {static_cast<std::size_t>(out_channels), static_cast<std::size_t>(in_channels)},
        1.0 / static_cast<double>(in_channels), true);
    p.b = Tensor::zeros({static_cast<std::size_t>(out_channels)}, true);
    return p;
}

std::vector<Tensor> aam_forward(const std::vector<Tensor>& student_maps, const AamParams& aam) {
    const int mn = aam.in_channels;
    if (static_cast<int>(student_maps.size()) != mn)
        throw ConfigError("aam_forward: got " + std::to_string(student_maps.size()) +
                          " student maps, AAM expects " + std::to_string(mn));
    const Shape& map_shape = student_maps[0].shape();
    for (const Tensor& m : student_maps)
        if (m.shape() != map_shape)
            throw ShapeError("aam_forward: map shapes differ, " + shape_str(map_shape) + " vs " +
                             shape_str(m.shape()));

    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(aam.out_channels));
    const std::size_t n = numel(map_shape);
    for (int c = 0; c < aam.out_channels; ++c) {
        std::vector<Tensor> inputs = student_maps;
        inputs.push_back(aam.w);
        inputs.push_back(aam.b);
        Tensor h = Tensor::make(map_shape, "aam_mix", std::move(inputs));
        double* hd = h.data().data();
        const double bias = aam.b.data()[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < n; ++i) hd[i] = bias;
        for (int j = 0; j < mn; ++j) {
            const double wj = aam.w.data()[static_cast<std::size_t>(c * mn + j)];
            const double* md = student_maps[static_cast<std::size_t>(j)].data().data();
            for (std::size_t i = 0; i < n; ++i) hd[i] += wj * md[i];
        }
        if (h.requires_grad()) {
            TensorNode* hn = h.node();
            hn->backprop = [hn, c, mn, n]() {
                auto& wn = hn->inputs[static_cast<std::size_t>(mn)];
                auto& bn = hn->inputs[static_cast<std::size_t>(mn) + 1];
                const double* g = hn->grad.data();
                for (int j = 0; j < mn; ++j) {
                    auto& mapn = hn->inputs[static_cast<std::size_t>(j)];
                    if (mapn->requires_grad) {
                        const double wj = wn->value[static_cast<std::size_t>(c * mn + j)];
                        double* dm = mapn->grad_buffer().data();
                        for (std::size_t i = 0; i < n; ++i) dm[i] += wj * g[i];
                    }
                    if (wn->requires_grad) {
                        const double* md = mapn->value.data();
                        double s = 0.0;
                        for (std::size_t i = 0; i < n; ++i) s += g[i] * md[i];
                        wn->grad_buffer()[static_cast<std::size_t>(c * mn + j)] += s;
                    }
                }
                if (bn->requires_grad) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < n; ++i) s += g[i];
                    bn->grad_buffer()[static_cast<std::size_t>(c)] += s;
                }
            };
        }
        out.push_back(std::move(h));
    }
    return out;
}

Tensor attention_transfer_loss(const std::vector<Tensor>& teacher_maps,
                               const std::vector<Tensor>& intermediate_maps,
                               const Tensor& row_mask) {
    if (teacher_maps.size() != intermediate_maps.size())
        throw ConfigError("attention_transfer_loss: " + std::to_string(teacher_maps.size()) +
                          " teacher maps vs " + std::to_string(intermediate_maps.size()) +
                          " intermediate maps");
    Tensor total;
    for (std::size_t c = 0; c < teacher_maps.size(); ++c) {
        Tensor term = kl_rows(teacher_maps[c], intermediate_maps[c], &row_mask);
        total = total.defined() ? add(total, term) : term;
    }
    return total;
}

namespace {

Tensor stack_loss(const std::vector<Tensor>& teacher_maps, const std::vector<Tensor>& student_maps,
                  const AamParams& aam, const DistillConfig& cfg, const Tensor& row_mask) {
    std::vector<Tensor> inputs = student_maps;
    std::vector<Tensor> targets = teacher_maps;
    if (cfg.layerwise_variant) {
        // channel counts are layers here; head counts fall out of the map totals
        const int s_heads = static_cast<int>(student_maps.size()) / aam.in_channels;
        const int t_heads = static_cast<int>(teacher_maps.size()) / aam.out_channels;
        inputs = layerwise_maps(student_maps, s_heads);
        targets = layerwise_maps(teacher_maps, t_heads);
    }
    std::vector<Tensor> intermediate = aam_forward(inputs, aam);
    if (cfg.renormalize_intermediate)
        for (Tensor& h : intermediate) h = renormalize_rows(h);
    return attention_transfer_loss(targets, intermediate, row_mask);
}

}  // namespace

Tensor combined_attention_loss(const AttentionMapSet& teacher_maps,
                               const AttentionMapSet& student_maps, const AamSet& aams,
                               const DistillConfig& cfg, const Tensor& src_row_mask,
                               const Tensor& tgt_row_mask, AttLossParts* parts) {
    if (!cfg.any_stack())
        throw ConfigError("combined_attention_loss: every attention stack is disabled");

    const int dec_stacks = (cfg.apply_dec_self ? 1 : 0) + (cfg.apply_dec_cross ? 1 : 0);
    const double dec_coeff = dec_stacks == 2 ? 0.5 : 1.0;

    Tensor total;
    auto accumulate = [&](const Tensor& term, double coeff, double* part) {
        if (part) *part = term.item();
        Tensor scaled = coeff == 1.0 ? term : scale(term, coeff);
        total = total.defined() ? add(total, scaled) : scaled;
    };

    if (cfg.apply_enc_self)
        accumulate(stack_loss(teacher_maps.enc_self, student_maps.enc_self, *aams.enc_self, cfg,
                              src_row_mask),
                   1.0, parts ? &parts->enc_self : nullptr);
    if (cfg.apply_dec_self)
        accumulate(stack_loss(teacher_maps.dec_self, student_maps.dec_self, *aams.dec_self, cfg,
                              tgt_row_mask),
                   dec_coeff, parts ? &parts->dec_self : nullptr);
    if (cfg.apply_dec_cross)
        accumulate(stack_loss(teacher_maps.dec_cross, student_maps.dec_cross, *aams.dec_cross,
                              cfg, tgt_row_mask),
                   dec_coeff, parts ? &parts->dec_cross : nullptr);
    return total;
}

Tensor vanilla_kd_loss(const Tensor& student_logits, const Tensor& teacher_logits,
                       const Tensor& tgt_row_mask, double temperature) {
    if (student_logits.shape() != teacher_logits.shape())
        throw ShapeError("vanilla_kd_loss: logits shapes differ, " +
                         shape_str(student_logits.shape()) + " vs " +
                         shape_str(teacher_logits.shape()));
    Tensor teacher_probs;
    {
        NoGradGuard ng;  // teacher side is a constant target
        teacher_probs = softmax_rows(scale(teacher_logits, 1.0 / temperature));
    }
    Tensor log_student = log_softmax_rows(scale(student_logits, 1.0 / temperature));
    Tensor ce = soft_cross_entropy_rows(log_student, teacher_probs, &tgt_row_mask);
    return temperature == 1.0 ? ce : scale(ce, temperature * temperature);
}

std::vector<Tensor> layerwise_maps(const std::vector<Tensor>& maps, int n_heads) {
    if (n_heads < 1 || maps.size() % static_cast<std::size_t>(n_heads) != 0)
        throw ConfigError("layerwise_maps: " + std::to_string(maps.size()) +
                          " maps not divisible by " + std::to_string(n_heads) + " heads");
    const std::size_t layers = maps.size() / static_cast<std::size_t>(n_heads);
    std::vector<Tensor> out;
    out.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        Tensor acc = maps[l * n_heads];
        for (int h = 1; h < n_heads; ++h) acc = add(acc, maps[l * n_heads + h]);
        out.push_back(scale(acc, 1.0 / n_heads));
    }
    return out;
}

std::size_t aam_param_count(int m_heads, int n_layers, int c_teacher) {
    if (m_heads < 1 || n_layers < 1 || c_teacher < 1)
        throw ConfigError("aam_param_count: counts must be positive");
    // M*N*C mixing weights plus the C bias terms
    return static_cast<std::size_t>(m_heads) * n_layers * c_teacher +
           static_cast<std::size_t>(c_teacher);
}

AamParams make_stack_aam(int student_layers, int student_heads, int teacher_layers,
                         int teacher_heads, bool layerwise) {
    const int in = layerwise ? student_layers : student_layers * student_heads;
    const int out = layerwise ? teacher_layers : teacher_layers * teacher_heads;
    return AamParams::uniform_init(in, out);
}

AamSet make_aams(const ModelConfig& student, const ModelConfig& teacher,
                 const DistillConfig& cfg) {
    AamSet set;
    if (cfg.apply_enc_self)
        set.enc_self = make_stack_aam(student.n_enc_layers, student.n_heads, teacher.n_enc_layers,
                                      teacher.n_heads, cfg.layerwise_variant);
    if (cfg.apply_dec_self)
        set.dec_self = make_stack_aam(student.n_dec_layers, student.n_heads, teacher.n_dec_layers,
                                      teacher.n_heads, cfg.layerwise_variant);
    if (cfg.apply_dec_cross)
        set.dec_cross = make_stack_aam(student.n_dec_layers, student.n_heads,
                                       teacher.n_dec_layers, teacher.n_heads,
                                       cfg.layerwise_variant);
    return set;
}

Tensor task_cross_entropy(const Tensor& logits, const Batch& batch) {
    const std::size_t b = batch.batch_size(), l = batch.tgt_len();
    const std::size_t v = logits.dim(2);
    std::vector<int> flat_targets;
    flat_targets.reserve(b * l);
    for (const auto& row : batch.tgt_out_ids)
        flat_targets.insert(flat_targets.end(), row.begin(), row.end());
    return cross_entropy(reshape(logits, {b * l, v}), flat_targets, Vocab::kPad);
}

std::pair<Tensor, LossMetrics> total_loss(const Batch& batch, TransformerModel& student,
                                          TransformerModel& teacher, AamSet& aams,
                                          const DistillConfig& cfg, double lambda_now,
                                          bool training, std::mt19937_64* dropout_rng) {
    cfg.validate();
    LossMetrics metrics;
    const bool need_att = lambda_now > 0.0 && cfg.any_stack();
    const bool need_kd = cfg.mu_kd > 0.0;

    ForwardResult student_fwd = student.forward(batch, need_att, training, dropout_rng);
    Tensor loss = task_cross_entropy(student_fwd.logits, batch);
    metrics.ce = loss.item();

    if (need_att || need_kd) {
        ForwardResult teacher_fwd;
        {
            NoGradGuard ng;  // teacher is frozen: no dropout, no graph
            teacher_fwd = teacher.forward(batch, need_att, false, nullptr);
        }
        if (need_att) {
            AttLossParts parts;
            Tensor att = combined_attention_loss(teacher_fwd.maps, student_fwd.maps, aams, cfg,
                                                 batch.src_mask, batch.tgt_mask, &parts);
            metrics.att_enc_self = parts.enc_self;
            metrics.att_dec_self = parts.dec_self;
            metrics.att_dec_cross = parts.dec_cross;
            loss = add(loss, scale(att, lambda_now));
        }
        if (need_kd) {
            Tensor kd = vanilla_kd_loss(student_fwd.logits, teacher_fwd.logits, batch.tgt_mask,
                                        cfg.kd_temperature);
            metrics.kd = kd.item();
            loss = add(loss, scale(kd, cfg.mu_kd));
        }
    }
    metrics.total = loss.item();
    return {loss, metrics};
}

}  // namespace a2d
