#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "a2d/data.hpp"
#include "a2d/ops.hpp"
#include "a2d/transformer.hpp"

using namespace a2d;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> u(-scale, scale);
    for (double& v : t.data()) v = u(rng);
    return t;
}

Batch make_batch(const std::vector<std::vector<int>>& src, const std::vector<std::vector<int>>& tgt,
                 const Vocab& vocab) {
    ParallelCorpus c;
    for (std::size_t i = 0; i < src.size(); ++i) {
        SentencePair p;
        for (int id : src[i]) p.src.push_back(vocab.token(id));
        for (int id : tgt[i]) p.tgt.push_back(vocab.token(id));
        c.pairs.push_back(p);
    }
    return batchify(c, src.size(), vocab, 0, 64)[0];
}

ModelConfig tiny_config(int vocab) {
    ModelConfig cfg;
    cfg.n_enc_layers = 2;
    cfg.n_dec_layers = 2;
    cfg.n_heads = 4;
    cfg.d_model = 16;
    cfg.d_ffn = 24;
    cfg.vocab_size = vocab;
    cfg.max_len = 32;
    cfg.dropout_rate = 0.0;
    return cfg;
}

Vocab test_vocab(int content) {
    std::vector<std::string> toks;
    for (int i = 0; i < content; ++i) toks.push_back("w" + std::to_string(i));
    return Vocab(toks);
}

// Independent per-head attention oracle: explicit Q/K/V projections and a
// scalar-loop softmax, no shared code with multi_head_attention.
std::vector<double> head_loop_oracle(const std::vector<double>& xq, std::size_t lq,
                                     const std::vector<double>& xkv, std::size_t lkv,
                                     std::size_t d, const MhaParams& p,
                                     const std::vector<double>& mask) {
    const std::size_t n_heads = p.heads.size();
    const std::size_t dh = d / n_heads;
    std::vector<double> concat(lq * d, 0.0);
    for (std::size_t h = 0; h < n_heads; ++h) {
        std::vector<double> q(lq * dh, 0.0), k(lkv * dh, 0.0), v(lkv * dh, 0.0);
        for (std::size_t i = 0; i < lq; ++i)
            for (std::size_t a = 0; a < dh; ++a)
                for (std::size_t b = 0; b < d; ++b)
                    q[i * dh + a] += xq[i * d + b] * p.heads[h].wq.data()[b * dh + a];
        for (std::size_t i = 0; i < lkv; ++i)
            for (std::size_t a = 0; a < dh; ++a)
                for (std::size_t b = 0; b < d; ++b) {
                    k[i * dh + a] += xkv[i * d + b] * p.heads[h].wk.data()[b * dh + a];
                    v[i * dh + a] += xkv[i * d + b] * p.heads[h].wv.data()[b * dh + a];
                }
        for (std::size_t i = 0; i < lq; ++i) {
            std::vector<double> row(lkv, 0.0);
            double mx = -1e300;
            for (std::size_t j = 0; j < lkv; ++j) {
                if (mask[i * lkv + j] < 0.5) continue;
                for (std::size_t a = 0; a < dh; ++a)
                    row[j] += q[i * dh + a] * k[j * dh + a];
                row[j] /= std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, row[j]);
            }
            double s = 0.0;
            for (std::size_t j = 0; j < lkv; ++j)
                if (mask[i * lkv + j] > 0.5) s += std::exp(row[j] - mx);
            for (std::size_t a = 0; a < dh; ++a) {
                double acc = 0.0;
                for (std::size_t j = 0; j < lkv; ++j)
                    if (mask[i * lkv + j] > 0.5)
                        acc += std::exp(row[j] - mx) / s * v[j * dh + a];
                concat[i * d + h * dh + a] = acc;
            }
        }
    }
    std::vector<double> out(lq * d, 0.0);
    for (std::size_t i = 0; i < lq; ++i)
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                out[i * d + a] += concat[i * d + b] * p.wo.data()[b * d + a];
    return out;
}

MhaParams random_mha(std::size_t d, std::size_t n_heads, std::mt19937_64& rng) {
    MhaParams p;
    for (std::size_t h = 0; h < n_heads; ++h)
        p.heads.push_back({random_tensor({d, d / n_heads}, rng), random_tensor({d, d / n_heads}, rng),
                           random_tensor({d, d / n_heads}, rng)});
    p.wo = random_tensor({d, d}, rng);
    return p;
}

}  // namespace

TEST_CASE("zero query/key projections give uniform attention over unmasked keys") {
    std::mt19937_64 rng(3);
    const std::size_t d = 4;
    MhaParams p;
    p.heads.push_back({Tensor::zeros({d, d}), Tensor::zeros({d, d}),
                       random_tensor({d, d}, rng)});
    p.wo = random_tensor({d, d}, rng);
    Tensor x = random_tensor({1, 3, d}, rng);
    Tensor mask = Tensor::from({1, 3, 3}, {1, 1, 0, 1, 1, 0, 1, 1, 0});
    MhaResult res = multi_head_attention(x, x, p, mask);
    REQUIRE(res.maps.size() == 1);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(res.maps[0].data()[i * 3 + 0] == doctest::Approx(0.5));
        CHECK(res.maps[0].data()[i * 3 + 1] == doctest::Approx(0.5));
        CHECK(res.maps[0].data()[i * 3 + 2] == 0.0);
    }
}

TEST_CASE("causal mask: first row attends only to itself") {
    Tensor valid = Tensor::full({1, 3}, 1.0);
    Tensor mask = self_attn_mask(valid, true);
    std::mt19937_64 rng(5);
    const std::size_t d = 4;
    MhaParams p = random_mha(d, 1, rng);
    Tensor x = random_tensor({1, 3, d}, rng);
    MhaResult res = multi_head_attention(x, x, p, mask);
    CHECK(res.maps[0].data()[0] == doctest::Approx(1.0));
    CHECK(res.maps[0].data()[1] == 0.0);
    CHECK(res.maps[0].data()[2] == 0.0);
}

TEST_CASE("multi_head_attention matches independent head-loop oracle") {
    std::mt19937_64 rng(7);
    const std::size_t d = 8, lq = 4, lkv = 5;
    MhaParams p = random_mha(d, 2, rng);
    Tensor xq = random_tensor({1, lq, d}, rng);
    Tensor xkv = random_tensor({1, lkv, d}, rng);
    Tensor mask = Tensor::zeros({1, lq, lkv});
    std::bernoulli_distribution keep(0.8);
    for (std::size_t i = 0; i < lq; ++i) {
        mask.data()[i * lkv] = 1.0;  // never fully masked
        for (std::size_t j = 1; j < lkv; ++j) mask.data()[i * lkv + j] = keep(rng) ? 1.0 : 0.0;
    }
    MhaResult res = multi_head_attention(xq, xkv, p, mask);
    auto want = head_loop_oracle(xq.data(), lq, xkv.data(), lkv, d, p, mask.data());
    REQUIRE(res.out.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(res.out.data()[i] == doctest::Approx(want[i]).epsilon(1e-10));
}

TEST_CASE("mask shape mismatch raises a dimension error") {
    std::mt19937_64 rng(9);
    MhaParams p = random_mha(4, 1, rng);
    Tensor x = random_tensor({1, 3, 4}, rng);
    Tensor bad_mask = Tensor::zeros({1, 2, 3});
    CHECK_THROWS_AS(multi_head_attention(x, x, p, bad_mask), ShapeError);
}

TEST_CASE("forward: map counts, row sums, causality support") {
    Vocab vocab = test_vocab(8);
    ModelConfig cfg = tiny_config(vocab.size());
    TransformerModel model(cfg, 42);
    Batch batch = make_batch({{4, 5, 6}, {5, 6, 4, 7}}, {{6, 5}, {4, 5, 6}}, vocab);

    ForwardResult res = model.forward(batch, true);
    CHECK(res.maps.enc_self.size() == 8);   // 2 layers x 4 heads
    CHECK(res.maps.dec_self.size() == 8);
    CHECK(res.maps.dec_cross.size() == 8);

    auto check_rows = [](const Tensor& map, const Tensor& q_valid) {
        const std::size_t lk = map.shape()[2], lq = map.shape()[1], b = map.shape()[0];
        for (std::size_t t = 0; t < b; ++t)
            for (std::size_t i = 0; i < lq; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < lk; ++j) s += map.data()[(t * lq + i) * lk + j];
                if (q_valid.data()[t * lq + i] > 0.5)
                    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
                else
                    CHECK(s == 0.0);  // pure-padding query row
            }
    };
    for (const Tensor& m : res.maps.enc_self) check_rows(m, batch.src_mask);
    for (const Tensor& m : res.maps.dec_self) check_rows(m, batch.tgt_mask);
    for (const Tensor& m : res.maps.dec_cross) check_rows(m, batch.tgt_mask);

    // strictly causal: everything above the diagonal is exactly zero
    for (const Tensor& m : res.maps.dec_self) {
        const std::size_t l = m.shape()[1];
        for (std::size_t t = 0; t < m.shape()[0]; ++t)
            for (std::size_t i = 0; i < l; ++i)
                for (std::size_t j = i + 1; j < l; ++j)
                    CHECK(m.data()[(t * l + i) * l + j] == 0.0);
    }

    // attention over padding keys is exactly zero
    for (const Tensor& m : res.maps.enc_self) {
        const std::size_t l = m.shape()[1];
        for (std::size_t t = 0; t < m.shape()[0]; ++t)
            for (std::size_t i = 0; i < l; ++i)
                for (std::size_t j = 0; j < l; ++j)
                    if (batch.src_mask.data()[t * l + j] < 0.5)
                        CHECK(m.data()[(t * l + i) * l + j] == 0.0);
    }
}

TEST_CASE("identical rows produce identical logits") {
    Vocab vocab = test_vocab(8);
    TransformerModel model(tiny_config(vocab.size()), 1);
    Batch batch = make_batch({{4, 5, 6}, {4, 5, 6}}, {{6, 5}, {6, 5}}, vocab);
    ForwardResult res = model.forward(batch);
    const std::size_t half = res.logits.size() / 2;
    for (std::size_t i = 0; i < half; ++i)
        CHECK(res.logits.data()[i] == res.logits.data()[half + i]);
}

TEST_CASE("eval-mode forward is bit-identical across calls") {
    Vocab vocab = test_vocab(8);
    TransformerModel model(tiny_config(vocab.size()), 1);
    Batch batch = make_batch({{4, 5, 6, 7}}, {{7, 6, 5}}, vocab);
    ForwardResult a = model.forward(batch);
    ForwardResult b = model.forward(batch);
    CHECK(a.logits.data() == b.logits.data());
}

TEST_CASE("causality: future target tokens cannot change earlier logits") {
    Vocab vocab = test_vocab(8);
    TransformerModel model(tiny_config(vocab.size()), 13);
    Batch a = make_batch({{4, 5, 6}}, {{6, 5, 4}}, vocab);
    Batch b = make_batch({{4, 5, 6}}, {{6, 5, 7}}, vocab);  // differs in last target token
    Tensor la = model.forward(a).logits;
    Tensor lb = model.forward(b).logits;
    const std::size_t v = la.dim(2);
    // positions 0..2 read tgt_in = [BOS, 6, 5] in both; only position 3 differs
    for (std::size_t pos = 0; pos < 3; ++pos)
        for (std::size_t j = 0; j < v; ++j)
            CHECK(la.data()[pos * v + j] == lb.data()[pos * v + j]);
}

TEST_CASE("parameter count matches the closed form") {
    for (auto [e, d, h] : {std::tuple{1, 1, 2}, std::tuple{2, 2, 4}, std::tuple{3, 2, 8}}) {
        ModelConfig cfg;
        cfg.n_enc_layers = e;
        cfg.n_dec_layers = d;
        cfg.n_heads = h;
        cfg.d_model = 16;
        cfg.d_ffn = 24;
        cfg.vocab_size = 11;
        TransformerModel model(cfg, 0);
        CHECK(model.param_count() == TransformerModel::expected_param_count(cfg));
    }
}

TEST_CASE("config validation") {
    ModelConfig cfg = tiny_config(8);
    cfg.n_heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(TransformerModel(cfg, 0), ConfigError);
    cfg = tiny_config(8);
    cfg.n_enc_layers = 0;
    CHECK_THROWS_AS(TransformerModel(cfg, 0), ConfigError);
}

TEST_CASE("oversize sequence raises an input error") {
    Vocab vocab = test_vocab(8);
    ModelConfig cfg = tiny_config(vocab.size());
    cfg.max_len = 4;
    TransformerModel model(cfg, 1);
    Batch batch = make_batch({{4, 5, 6, 7, 4, 5}}, {{6}}, vocab);
    CHECK_THROWS_AS(model.forward(batch), InputError);
}

TEST_CASE("greedy decode terminates and handles degenerate input") {
    Vocab vocab = test_vocab(8);
    TransformerModel model(tiny_config(vocab.size()), 99);  // untrained
    auto out = greedy_decode(model, {4, 5, 6}, 10);
    CHECK(out.size() <= 10);
    auto empty_src = greedy_decode(model, {}, 10);
    CHECK(empty_src.size() <= 10);  // no crash on empty source
}

TEST_CASE("trainable toggle stops gradient flow") {
    Vocab vocab = test_vocab(8);
    TransformerModel model(tiny_config(vocab.size()), 7);
    model.set_trainable(false);
    Batch batch = make_batch({{4, 5}}, {{5}}, vocab);
    ForwardResult res = model.forward(batch);
    CHECK_FALSE(res.logits.requires_grad());
}
