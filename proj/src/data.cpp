#include "a2d/data.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "a2d/error.hpp"

namespace a2d {

namespace {
const char* kReservedTokens[Vocab::kReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() {
    for (const char* t : kReservedTokens) {
        token_to_id.emplace(t, static_cast<int>(id_to_token.size()));
        id_to_token.emplace_back(t);
    }
}

Vocab::Vocab(const std::vector<std::string>& content_tokens) : Vocab() {
    for (const auto& t : content_tokens) {
        if (token_to_id.count(t))
            throw InputError("vocab: duplicate token '" + t + "'");
        token_to_id.emplace(t, static_cast<int>(id_to_token.size()));
        id_to_token.push_back(t);
    }
}

int Vocab::id(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size())
        throw InputError("vocab: id " + std::to_string(id) + " out of range");
    return id_to_token[static_cast<std::size_t>(id)];
}

std::vector<std::string> Vocab::content_tokens() const {
    return {id_to_token.begin() + kReserved, id_to_token.end()};
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write vocab file " + path);
    for (std::size_t i = kReserved; i < id_to_token.size(); ++i) f << id_to_token[i] << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read vocab file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) tokens.push_back(line);
    }
    return Vocab(tokens);
}

namespace {

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::istringstream is(text);
    std::vector<std::string> out;
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

}  // namespace

ParallelCorpus load_parallel_tsv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read corpus file " + path);
    ParallelCorpus corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw InputError(path + ":" + std::to_string(lineno) + ": missing TAB separator");
        if (line.find('\t', tab + 1) != std::string::npos)
            throw InputError(path + ":" + std::to_string(lineno) + ": more than one TAB");
        SentencePair pair;
        pair.src = whitespace_tokens(line.substr(0, tab));
        pair.tgt = whitespace_tokens(line.substr(tab + 1));
        if (pair.src.empty() || pair.tgt.empty())
            throw InputError(path + ":" + std::to_string(lineno) + ": empty source or target");
        corpus.pairs.push_back(std::move(pair));
    }
    if (corpus.empty()) std::cerr << "warning: corpus " << path << " is empty\n";
    return corpus;
}

SynthKind synth_kind_from_name(const std::string& name) {
    if (name == "copy") return SynthKind::Copy;
    if (name == "reverse") return SynthKind::Reverse;
    if (name == "digit_map") return SynthKind::DigitMap;
    throw ConfigError("unknown synthetic task '" + name + "' (copy|reverse|digit_map)");
}

ParallelCorpus synth_task(SynthKind kind, std::size_t n_pairs, std::size_t min_len,
                          std::size_t max_len, std::size_t vocab_size, std::uint64_t seed) {
    if (vocab_size < 5) throw ConfigError("synth_task: vocab_size must be >= 5");
    if (min_len < 1 || min_len > max_len)
        throw ConfigError("synth_task: invalid length range [" + std::to_string(min_len) + ", " +
                          std::to_string(max_len) + "]");

    // The digit_map bijection depends only on vocab_size so that every split
    // of the task shares one mapping, whatever its sampling seed.
    std::vector<std::size_t> mapping(vocab_size);
    std::iota(mapping.begin(), mapping.end(), 0);
    if (kind == SynthKind::DigitMap) {
        std::mt19937_64 map_rng(0xA11C0DEULL + vocab_size);
        std::shuffle(mapping.begin(), mapping.end(), map_rng);
    }

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> len_dist(min_len, max_len);
    std::uniform_int_distribution<std::size_t> tok_dist(0, vocab_size - 1);

    ParallelCorpus corpus;
    corpus.pairs.reserve(n_pairs);
    for (std::size_t i = 0; i < n_pairs; ++i) {
        const std::size_t len = len_dist(rng);
        SentencePair pair;
        pair.src.reserve(len);
        for (std::size_t j = 0; j < len; ++j)
            pair.src.push_back("w" + std::to_string(tok_dist(rng)));
        switch (kind) {
            case SynthKind::Copy:
                pair.tgt = pair.src;
                break;
            case SynthKind::Reverse:
                pair.tgt.assign(pair.src.rbegin(), pair.src.rend());
                break;
            case SynthKind::DigitMap:
                pair.tgt.reserve(len);
                for (const auto& tok : pair.src) {
                    const std::size_t idx = std::stoul(tok.substr(1));
                    pair.tgt.push_back("w" + std::to_string(mapping[idx]));
                }
                break;
        }
        corpus.pairs.push_back(std::move(pair));
    }
    return corpus;
}

Vocab vocab_from_corpus(const ParallelCorpus& corpus) {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, bool> seen;
    auto collect = [&](const std::vector<std::string>& side) {
        for (const auto& t : side)
            if (seen.emplace(t, true).second) tokens.push_back(t);
    };
    for (const auto& p : corpus.pairs) {
        collect(p.src);
        collect(p.tgt);
    }
    return Vocab(tokens);
}

std::vector<Batch> batchify(const ParallelCorpus& corpus, std::size_t batch_size,
                            const Vocab& vocab, std::uint64_t shuffle_seed,
                            std::size_t max_len) {
    if (corpus.empty()) throw InputError("batchify: empty corpus");
    if (batch_size == 0) throw ConfigError("batchify: batch_size must be >= 1");

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_seed != 0) {
        std::mt19937_64 rng(shuffle_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(start + batch_size, order.size());
        const std::size_t b = end - start;
        std::size_t src_max = 0, tgt_max = 0;
        for (std::size_t i = start; i < end; ++i) {
            const SentencePair& p = corpus.pairs[order[i]];
            if (p.src.size() > max_len || p.tgt.size() + 1 > max_len)
                throw InputError("batchify: pair " + std::to_string(order[i]) +
                                 " exceeds model max_len " + std::to_string(max_len));
            src_max = std::max(src_max, p.src.size());
            tgt_max = std::max(tgt_max, p.tgt.size() + 1);  // room for BOS / EOS shift
        }
        Batch batch;
        batch.src_ids.assign(b, std::vector<int>(src_max, Vocab::kPad));
        batch.tgt_in_ids.assign(b, std::vector<int>(tgt_max, Vocab::kPad));
        batch.tgt_out_ids.assign(b, std::vector<int>(tgt_max, Vocab::kPad));
        batch.src_mask = Tensor::zeros({b, src_max});
        batch.tgt_mask = Tensor::zeros({b, tgt_max});
        for (std::size_t i = 0; i < b; ++i) {
            const SentencePair& p = corpus.pairs[order[start + i]];
            for (std::size_t j = 0; j < p.src.size(); ++j) {
                batch.src_ids[i][j] = vocab.id(p.src[j]);
                batch.src_mask.data()[i * src_max + j] = 1.0;
            }
            batch.tgt_in_ids[i][0] = Vocab::kBos;
            for (std::size_t j = 0; j < p.tgt.size(); ++j) {
                const int id = vocab.id(p.tgt[j]);
                batch.tgt_in_ids[i][j + 1] = id;
                batch.tgt_out_ids[i][j] = id;
            }
            batch.tgt_out_ids[i][p.tgt.size()] = Vocab::kEos;
            for (std::size_t j = 0; j <= p.tgt.size(); ++j)
                batch.tgt_mask.data()[i * tgt_max + j] = 1.0;
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace a2d
