#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "a2d/eval.hpp"
#include "a2d/tensor.hpp"

using namespace a2d;

namespace {

std::vector<std::string> words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace

TEST_CASE("perfect hypotheses score exactly 100") {
    std::vector<std::vector<std::string>> refs{words("a b c d e"), words("x y z"),
                                               words("a a b")};
    BleuResult r = corpus_bleu(refs, refs);
    CHECK(r.score == 100.0);
    CHECK(r.brevity_penalty == 1.0);
}

TEST_CASE("clipped unigram precision on the repeated-token case") {
    // hand oracle: hyp "the the the the" vs ref "the cat sat down"
    // clipped unigram matches = min(4, 1) = 1 over 4 -> 1/4
    std::vector<std::vector<std::string>> hyp{words("the the the the")};
    std::vector<std::vector<std::string>> ref{words("the cat sat down")};
    BleuResult r = corpus_bleu(hyp, ref);
    CHECK(r.precisions[0] == doctest::Approx(0.25).epsilon(1e-12));

    // full score by hand: p2 = (0+1)/(3+1), p3 = (0+1)/(2+1), p4 = (0+1)/(1+1), BP = 1
    const double want =
        100.0 * std::exp((std::log(0.25) + std::log(0.25) + std::log(1.0 / 3.0) +
                          std::log(0.5)) /
                         4.0);
    CHECK(r.score == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("brevity penalty for a half-length hypothesis") {
    // hyp matches the first half of the reference perfectly
    std::vector<std::vector<std::string>> hyp{words("a b")};
    std::vector<std::vector<std::string>> ref{words("a b c d")};
    BleuResult r = corpus_bleu(hyp, ref);
    CHECK(r.brevity_penalty == doctest::Approx(std::exp(1.0 - 4.0 / 2.0)).epsilon(1e-12));
    // all precisions are 1 (or smoothed 1 for empty n-gram totals)
    const double want = 100.0 * std::exp(-1.0);
    CHECK(r.score == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("corpus order permutation does not change the score") {
    std::mt19937_64 rng(5);
    std::vector<std::vector<int>> hyps, refs;
    std::uniform_int_distribution<int> tok(0, 9), len(1, 8);
    for (int i = 0; i < 20; ++i) {
        std::vector<int> h, r;
        for (int j = len(rng); j > 0; --j) h.push_back(tok(rng));
        for (int j = len(rng); j > 0; --j) r.push_back(tok(rng));
        hyps.push_back(h);
        refs.push_back(r);
    }
    const double base = corpus_bleu(hyps, refs).score;
    std::vector<std::size_t> order(hyps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> h2, r2;
    for (std::size_t i : order) {
        h2.push_back(hyps[i]);
        r2.push_back(refs[i]);
    }
    CHECK(corpus_bleu(h2, r2).score == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("corrupting a hypothesis token rarely raises the score") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> tok(0, 9), len(4, 9);
    int non_increase = 0, trials = 200;
    for (int t = 0; t < trials; ++t) {
        std::vector<std::vector<int>> refs, hyps;
        for (int i = 0; i < 5; ++i) {
            std::vector<int> r;
            for (int j = len(rng); j > 0; --j) r.push_back(tok(rng));
            refs.push_back(r);
            hyps.push_back(r);  // perfect before corruption
        }
        const double before = corpus_bleu(hyps, refs).score;
        auto& victim = hyps[rng() % hyps.size()];
        std::size_t pos = rng() % victim.size();
        victim[pos] = (victim[pos] + 1 + static_cast<int>(rng() % 9)) % 10;
        const double after = corpus_bleu(hyps, refs).score;
        if (after <= before + 1e-12) ++non_increase;
    }
    CHECK(non_increase >= trials * 95 / 100);
}

TEST_CASE("empty corpus and length mismatch are input errors") {
    std::vector<std::vector<int>> none;
    CHECK_THROWS_AS(corpus_bleu(none, none), InputError);
    std::vector<std::vector<int>> one{{1}};
    CHECK_THROWS_AS(corpus_bleu(one, none), InputError);
}

TEST_CASE("token accuracy from logits") {
    // 4 real positions + 4 pads; half of the real ones correct
    Tensor logits = Tensor::zeros({8, 3});
    auto put = [&](std::size_t row, int winner) { logits.data()[row * 3 + winner] = 5.0; };
    put(0, 1);
    put(1, 2);
    put(2, 0);
    put(3, 0);
    std::vector<std::vector<int>> targets{{1, 2, 1, 2, 0, 0, 0, 0}};
    CHECK(token_accuracy(logits, targets, 0) == doctest::Approx(0.5));

    std::vector<std::vector<int>> all_correct{{1, 2, 0, 0, 0, 0, 0, 0}};
    // rows 2..7 are pad; rows 0 and 1 argmax to 1 and 2
    CHECK(token_accuracy(logits, all_correct, 0) == doctest::Approx(1.0));

    std::vector<std::vector<int>> all_pad{{0, 0, 0, 0, 0, 0, 0, 0}};
    CHECK(token_accuracy(logits, all_pad, 0) == 0.0);
}

TEST_CASE("token accuracy from decoded sequences") {
    std::vector<std::vector<int>> decodes{{5, 6, 7}, {5}};
    std::vector<std::vector<int>> refs{{5, 6, 8}, {5, 9}};
    // 2/3 correct in the first pair, 1/2 in the second -> 3/5
    CHECK(token_accuracy(decodes, refs, 0) == doctest::Approx(0.6));
}
