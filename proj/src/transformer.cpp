#include "a2d/transformer.hpp"

#include <cmath>

#include "a2d/error.hpp"

namespace a2d {

void ModelConfig::validate() const {
    if (n_enc_layers < 1 || n_dec_layers < 1 || n_heads < 1)
        throw ConfigError("model: layer and head counts must be >= 1");
    if (d_model < 1 || d_ffn < 1 || vocab_size < 1 || max_len < 1)
        throw ConfigError("model: dimensions must be >= 1");
    if (d_model % n_heads != 0)
        throw ConfigError("model: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("model: dropout_rate must be in [0, 1)");
}

MhaResult multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const MhaParams& params,
                               const Tensor& attn_mask) {
    const std::size_t d_head = params.heads[0].wq.dim(1);
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
    MhaResult res;
    std::vector<Tensor> head_outs;
    head_outs.reserve(params.heads.size());
    for (const auto& h : params.heads) {
        Tensor q = matmul(x_q, h.wq);
        Tensor k = matmul(x_kv, h.wk);
        Tensor v = matmul(x_kv, h.wv);
        Tensor scores = scale(matmul(q, transpose_last_two(k)), inv_sqrt);
        Tensor map = softmax_rows(scores, &attn_mask);
        res.maps.push_back(map);
        head_outs.push_back(matmul(map, v));
    }
    res.out = matmul(concat_last_dim(head_outs), params.wo);
    return res;
}

Tensor self_attn_mask(const Tensor& valid, bool causal) {
    const std::size_t b = valid.dim(0), l = valid.dim(1);
    Tensor mask = Tensor::zeros({b, l, l});
    const double* v = valid.data().data();
    double* m = mask.data().data();
    for (std::size_t t = 0; t < b; ++t)
        for (std::size_t i = 0; i < l; ++i)
            for (std::size_t j = 0; j < l; ++j) {
                const bool ok = v[t * l + i] > 0.5 && v[t * l + j] > 0.5 && (!causal || j <= i);
                m[(t * l + i) * l + j] = ok ? 1.0 : 0.0;
            }
    return mask;
}

Tensor cross_attn_mask(const Tensor& q_valid, const Tensor& k_valid) {
    const std::size_t b = q_valid.dim(0), lq = q_valid.dim(1), lk = k_valid.dim(1);
    Tensor mask = Tensor::zeros({b, lq, lk});
    const double* qv = q_valid.data().data();
    const double* kv = k_valid.data().data();
    double* m = mask.data().data();
    for (std::size_t t = 0; t < b; ++t)
        for (std::size_t i = 0; i < lq; ++i)
            for (std::size_t j = 0; j < lk; ++j)
                m[(t * lq + i) * lk + j] =
                    (qv[t * lq + i] > 0.5 && kv[t * lk + j] > 0.5) ? 1.0 : 0.0;
    return mask;
}

TransformerModel::TransformerModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(cfg_.d_model);
    const auto dh = static_cast<std::size_t>(cfg_.d_head());
    const auto f = static_cast<std::size_t>(cfg_.d_ffn);
    const auto v = static_cast<std::size_t>(cfg_.vocab_size);
    constexpr double kInitStd = 0.02;

    auto reg = [&](const std::string& name, Tensor t) {
        params_.emplace_back(name, t);
        return t;
    };
    auto proj = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        return reg(name, Tensor::randn({rows, cols}, rng, kInitStd, true));
    };
    auto make_mha = [&](const std::string& prefix) {
        MhaParams p;
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const std::string hp = prefix + ".h" + std::to_string(h);
            p.heads.push_back({proj(hp + ".wq", d, dh), proj(hp + ".wk", d, dh),
                               proj(hp + ".wv", d, dh)});
        }
        p.wo = proj(prefix + ".wo", d, d);
        return p;
    };
    auto make_ln = [&](const std::string& prefix) {
        LayerNormParams p;
        p.gain = reg(prefix + ".g", Tensor::full({d}, 1.0, true));
        p.bias = reg(prefix + ".b", Tensor::zeros({d}, true));
        return p;
    };
    auto make_ffn = [&](const std::string& prefix) {
        FfnParams p;
        p.w1 = proj(prefix + ".w1", d, f);
        p.b1 = reg(prefix + ".b1", Tensor::zeros({f}, true));
        p.w2 = proj(prefix + ".w2", f, d);
        p.b2 = reg(prefix + ".b2", Tensor::zeros({d}, true));
        return p;
    };

    embed_ = reg("embed", Tensor::randn({v, d}, rng, kInitStd, true));
    for (int l = 0; l < cfg_.n_enc_layers; ++l) {
        const std::string lp = "enc." + std::to_string(l);
        EncLayer layer;
        layer.self = make_mha(lp + ".self");
        layer.ln1 = make_ln(lp + ".ln1");
        layer.ffn = make_ffn(lp + ".ffn");
        layer.ln2 = make_ln(lp + ".ln2");
        enc_.push_back(std::move(layer));
    }
    for (int l = 0; l < cfg_.n_dec_layers; ++l) {
        const std::string lp = "dec." + std::to_string(l);
        DecLayer layer;
        layer.self = make_mha(lp + ".self");
        layer.ln1 = make_ln(lp + ".ln1");
        layer.cross = make_mha(lp + ".cross");
        layer.ln2 = make_ln(lp + ".ln2");
        layer.ffn = make_ffn(lp + ".ffn");
        layer.ln3 = make_ln(lp + ".ln3");
        dec_.push_back(std::move(layer));
    }
    out_w_ = proj("out.w", d, v);
    out_b_ = reg("out.b", Tensor::zeros({v}, true));
}

Tensor TransformerModel::parameter(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    throw ConfigError("no parameter named '" + name + "'");
}

std::size_t TransformerModel::param_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

void TransformerModel::set_trainable(bool trainable) {
    for (auto& [name, t] : params_) t.set_requires_grad(trainable);
}

std::size_t TransformerModel::expected_param_count(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model, f = cfg.d_ffn, v = cfg.vocab_size;
    const std::size_t enc_layer = 4 * d * d + 4 * d + 2 * d * f + f + d;
    const std::size_t dec_layer = 8 * d * d + 6 * d + 2 * d * f + f + d;
    return v * d + cfg.n_enc_layers * enc_layer + cfg.n_dec_layers * dec_layer + d * v + v;
}

Tensor TransformerModel::maybe_dropout(const Tensor& x, bool training, std::mt19937_64* rng) {
    if (!training || !rng || cfg_.dropout_rate <= 0.0) return x;
    return dropout(x, cfg_.dropout_rate, *rng);
}

Tensor TransformerModel::embed_sequence(const std::vector<std::vector<int>>& ids, bool training,
                                        std::mt19937_64* rng) {
    const std::size_t len = ids.empty() ? 0 : ids[0].size();
    if (len > static_cast<std::size_t>(cfg_.max_len))
        throw InputError("sequence length " + std::to_string(len) + " exceeds max_len " +
                         std::to_string(cfg_.max_len));
    Tensor x = scale(embedding_lookup(embed_, ids), std::sqrt(static_cast<double>(cfg_.d_model)));
    x = add(x, sinusoidal_positions(len, static_cast<std::size_t>(cfg_.d_model)));
    return maybe_dropout(x, training, rng);
}

Tensor TransformerModel::ffn_block(const Tensor& x, const FfnParams& p) {
    return add(matmul(relu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

Tensor TransformerModel::encode(const std::vector<std::vector<int>>& src_ids,
                                const Tensor& src_mask, bool training, std::mt19937_64* rng,
                                AttentionMapSet* maps) {
    Tensor x = embed_sequence(src_ids, training, rng);
    Tensor mask = self_attn_mask(src_mask, /*causal=*/false);
    for (auto& layer : enc_) {
        MhaResult a = multi_head_attention(x, x, layer.self, mask);
        if (maps)
            maps->enc_self.insert(maps->enc_self.end(), a.maps.begin(), a.maps.end());
        x = layer_norm(add(x, maybe_dropout(a.out, training, rng)), layer.ln1.gain, layer.ln1.bias);
        Tensor ff = ffn_block(x, layer.ffn);
        x = layer_norm(add(x, maybe_dropout(ff, training, rng)), layer.ln2.gain, layer.ln2.bias);
    }
    return x;
}

Tensor TransformerModel::decode(const std::vector<std::vector<int>>& tgt_in_ids,
                                const Tensor& tgt_mask, const Tensor& enc_out,
                                const Tensor& src_mask, bool training, std::mt19937_64* rng,
                                AttentionMapSet* maps) {
    Tensor x = embed_sequence(tgt_in_ids, training, rng);
    Tensor self_mask = self_attn_mask(tgt_mask, /*causal=*/true);
    Tensor cross_mask = cross_attn_mask(tgt_mask, src_mask);
    for (auto& layer : dec_) {
        MhaResult a = multi_head_attention(x, x, layer.self, self_mask);
        if (maps)
            maps->dec_self.insert(maps->dec_self.end(), a.maps.begin(), a.maps.end());
        x = layer_norm(add(x, maybe_dropout(a.out, training, rng)), layer.ln1.gain, layer.ln1.bias);
        MhaResult c = multi_head_attention(x, enc_out, layer.cross, cross_mask);
        if (maps)
            maps->dec_cross.insert(maps->dec_cross.end(), c.maps.begin(), c.maps.end());
        x = layer_norm(add(x, maybe_dropout(c.out, training, rng)), layer.ln2.gain, layer.ln2.bias);
        Tensor ff = ffn_block(x, layer.ffn);
        x = layer_norm(add(x, maybe_dropout(ff, training, rng)), layer.ln3.gain, layer.ln3.bias);
    }
    return add(matmul(x, out_w_), out_b_);
}

ForwardResult TransformerModel::forward(const Batch& batch, bool collect_maps, bool training,
                                        std::mt19937_64* dropout_rng) {
    ForwardResult res;
    AttentionMapSet* maps = collect_maps ? &res.maps : nullptr;
    Tensor enc_out = encode(batch.src_ids, batch.src_mask, training, dropout_rng, maps);
    res.logits = decode(batch.tgt_in_ids, batch.tgt_mask, enc_out, batch.src_mask, training,
                        dropout_rng, maps);
    return res;
}

namespace {

Batch single_step_batch(const std::vector<std::vector<int>>& src_ids,
                        const std::vector<std::vector<int>>& tgt_in) {
    Batch b;
    b.src_ids = src_ids;
    b.tgt_in_ids = tgt_in;
    const std::size_t n = src_ids.size();
    const std::size_t ls = src_ids[0].size(), lt = tgt_in[0].size();
    b.src_mask = Tensor::zeros({n, ls});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ls; ++j)
            b.src_mask.data()[i * ls + j] = src_ids[i][j] != Vocab::kPad ? 1.0 : 0.0;
    b.tgt_mask = Tensor::full({n, lt}, 1.0);
    return b;
}

}  // namespace

std::vector<std::vector<int>> greedy_decode_batch(TransformerModel& model,
                                                  const std::vector<std::vector<int>>& src_ids,
                                                  int max_steps) {
    NoGradGuard ng;
    const std::size_t n = src_ids.size();
    if (n == 0) return {};
    std::vector<std::vector<int>> safe_src = src_ids;
    std::size_t src_max = 1;
    for (auto& row : safe_src) {
        if (row.empty()) row.push_back(Vocab::kEos);  // degenerate empty source
        src_max = std::max(src_max, row.size());
    }
    for (auto& row : safe_src) row.resize(src_max, Vocab::kPad);
    Batch probe = single_step_batch(safe_src, std::vector<std::vector<int>>(n, {Vocab::kBos}));
    Tensor enc_out = model.encode(probe.src_ids, probe.src_mask, false, nullptr, nullptr);

    std::vector<std::vector<int>> tgt_in(n, std::vector<int>{Vocab::kBos});
    std::vector<std::vector<int>> out(n);
    std::vector<bool> done(n, false);
    for (int step = 0; step < max_steps; ++step) {
        const std::size_t lt = tgt_in[0].size();
        Tensor tgt_mask = Tensor::full({n, lt}, 1.0);
        Tensor logits = model.decode(tgt_in, tgt_mask, enc_out, probe.src_mask, false, nullptr,
                                     nullptr);
        // last position of each row decides the next token
        const std::size_t v = logits.dim(2);
        bool all_done = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (done[i]) {
                tgt_in[i].push_back(Vocab::kPad);
                continue;
            }
            const double* row = logits.data().data() + ((i * lt) + (lt - 1)) * v;
            std::size_t best = 0;
            for (std::size_t j = 1; j < v; ++j)
                if (row[j] > row[best]) best = j;
            const int tok = static_cast<int>(best);
            if (tok == Vocab::kEos) {
                done[i] = true;
                tgt_in[i].push_back(Vocab::kPad);
            } else {
                out[i].push_back(tok);
                tgt_in[i].push_back(tok);
                all_done = false;
            }
        }
        if (all_done) break;
    }
    return out;
}

std::vector<int> greedy_decode(TransformerModel& model, const std::vector<int>& src_ids,
                               int max_steps) {
    return greedy_decode_batch(model, {src_ids}, max_steps)[0];
}

double params_checksum(const std::vector<std::pair<std::string, Tensor>>& params) {
    double acc = 0.0;
    std::size_t i = 1;
    for (const auto& [name, t] : params)
        for (double v : t.data()) acc += v * static_cast<double>(i++ % 977);
    return acc;
}

}  // namespace a2d
