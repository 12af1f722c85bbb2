#include "a2d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <unordered_map>

#include "a2d/error.hpp"

namespace a2d {

namespace {

// n-grams packed into a map key; token ids are assumed to fit 16 bits for
// toy vocabularies, falling back to a tuple key otherwise would be overkill.
using Ngram = std::vector<int>;

struct NgramHash {
    std::size_t operator()(const Ngram& g) const {
        std::size_t h = 1469598103934665603ull;
        for (int v : g) {
            h ^= static_cast<std::size_t>(v) + 0x9e3779b9;
            h *= 1099511628211ull;
        }
        return h;
    }
};

using NgramCounts = std::unordered_map<Ngram, std::size_t, NgramHash>;

NgramCounts count_ngrams(const std::vector<int>& seq, int n) {
    NgramCounts counts;
    if (static_cast<int>(seq.size()) < n) return counts;
    for (std::size_t i = 0; i + n <= seq.size(); ++i)
        ++counts[Ngram(seq.begin() + i, seq.begin() + i + n)];
    return counts;
}

}  // namespace

BleuResult corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                       const std::vector<std::vector<int>>& references, int max_n) {
    if (hypotheses.empty()) throw InputError("corpus_bleu: empty corpus");
    if (hypotheses.size() != references.size())
        throw InputError("corpus_bleu: " + std::to_string(hypotheses.size()) +
                         " hypotheses vs " + std::to_string(references.size()) + " references");
    if (max_n < 1 || max_n > 4) throw ConfigError("corpus_bleu: max_n must be in 1..4");

    BleuResult res;
    std::vector<std::size_t> match(max_n, 0), total(max_n, 0);
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        const auto& hyp = hypotheses[i];
        const auto& ref = references[i];
        res.hyp_len += hyp.size();
        res.ref_len += ref.size();
        for (int n = 1; n <= max_n; ++n) {
            if (static_cast<int>(hyp.size()) < n) continue;
            total[n - 1] += hyp.size() - n + 1;
            NgramCounts ref_counts = count_ngrams(ref, n);
            for (const auto& [gram, cnt] : count_ngrams(hyp, n)) {
                auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) match[n - 1] += std::min(cnt, it->second);
            }
        }
    }

    double log_prec_sum = 0.0;
    for (int n = 0; n < max_n; ++n) {
        // add-one smoothing only when the clipped match count is zero
        double p = match[n] > 0
                       ? static_cast<double>(match[n]) / static_cast<double>(total[n])
                       : (static_cast<double>(match[n]) + 1.0) /
                             (static_cast<double>(total[n]) + 1.0);
        res.precisions[static_cast<std::size_t>(n)] = p;
        log_prec_sum += std::log(p);
    }
    res.brevity_penalty =
        res.hyp_len >= res.ref_len || res.hyp_len == 0
            ? 1.0
            : std::exp(1.0 - static_cast<double>(res.ref_len) / static_cast<double>(res.hyp_len));
    if (res.hyp_len == 0 && res.ref_len > 0) res.brevity_penalty = 0.0;
    res.score = 100.0 * res.brevity_penalty * std::exp(log_prec_sum / max_n);
    return res;
}

BleuResult corpus_bleu(const std::vector<std::vector<std::string>>& hypotheses,
                       const std::vector<std::vector<std::string>>& references, int max_n) {
    std::unordered_map<std::string, int> dict;
    auto encode = [&](const std::vector<std::vector<std::string>>& side) {
        std::vector<std::vector<int>> out(side.size());
        for (std::size_t i = 0; i < side.size(); ++i)
            for (const auto& tok : side[i])
                out[i].push_back(dict.emplace(tok, static_cast<int>(dict.size())).first->second);
        return out;
    };
    auto h = encode(hypotheses);
    auto r = encode(references);
    return corpus_bleu(h, r, max_n);
}

double token_accuracy(const Tensor& logits, const std::vector<std::vector<int>>& targets,
                      int pad_id) {
    const std::size_t v = logits.shape().back();
    const std::size_t rows = logits.size() / v;
    std::size_t flat = 0;
    for (const auto& r : targets) flat += r.size();
    if (flat != rows)
        throw ShapeError("token_accuracy: " + std::to_string(flat) + " targets for " +
                         std::to_string(rows) + " logit rows");
    const double* xd = logits.data().data();
    std::size_t correct = 0, counted = 0, row = 0;
    for (const auto& trow : targets) {
        for (int t : trow) {
            if (t != pad_id) {
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
    if (counted == 0) {
        std::cerr << "warning: token_accuracy over all-pad targets, defining as 0\n";
        return 0.0;
    }
    return static_cast<double>(correct) / static_cast<double>(counted);
}

double token_accuracy(const std::vector<std::vector<int>>& decodes,
                      const std::vector<std::vector<int>>& references, int pad_id) {
    if (decodes.size() != references.size())
        throw InputError("token_accuracy: decode/reference count mismatch");
    std::size_t correct = 0, counted = 0;
    for (std::size_t i = 0; i < decodes.size(); ++i) {
        for (std::size_t j = 0; j < references[i].size(); ++j) {
            if (references[i][j] == pad_id) continue;
            ++counted;
            if (j < decodes[i].size() && decodes[i][j] == references[i][j]) ++correct;
        }
    }
    if (counted == 0) {
        std::cerr << "warning: token_accuracy over all-pad targets, defining as 0\n";
        return 0.0;
    }
    return static_cast<double>(correct) / static_cast<double>(counted);
}

}  // namespace a2d
