// a2d: train teachers, distill students, evaluate, and export AAM weights.
// Exit codes: 0 ok, 1 runtime failure, 2 usage/config errors. Stdout carries
// machine-readable JSON results; human-facing logs go to stderr.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "a2d/checkpoint.hpp"
#include "a2d/config.hpp"
#include "a2d/data.hpp"
#include "a2d/distill.hpp"
#include "a2d/error.hpp"
#include "a2d/eval.hpp"
#include "a2d/train.hpp"
#include "a2d/transformer.hpp"

namespace fs = std::filesystem;
using namespace a2d;

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t x = seed ^ (salt * 0x9E3779B97F4A7C15ULL);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

struct SynthOptions {
    std::size_t pairs = 2000;
    std::size_t valid_pairs = 200;
    std::size_t min_len = 3;
    std::size_t max_len = 8;
    std::size_t vocab = 16;
};

struct DataSpec {
    bool synth = false;
    SynthKind kind = SynthKind::Copy;
    std::string path;
};

DataSpec parse_data_arg(const std::string& arg) {
    DataSpec spec;
    if (arg.rfind("synth:", 0) == 0) {
        spec.synth = true;
        spec.kind = synth_kind_from_name(arg.substr(6));
    } else {
        spec.path = arg;
    }
    return spec;
}

struct Corpora {
    ParallelCorpus train;
    ParallelCorpus valid;
};

Corpora resolve_train_corpora(const DataSpec& spec, const SynthOptions& synth,
                              const std::string& valid_path, std::uint64_t seed) {
    Corpora c;
    if (spec.synth) {
        c.train = synth_task(spec.kind, synth.pairs, synth.min_len, synth.max_len, synth.vocab,
                             seed);
        c.valid = synth_task(spec.kind, synth.valid_pairs, synth.min_len, synth.max_len,
                             synth.vocab, mix_seed(seed, 0x7A11D));
    } else {
        c.train = load_parallel_tsv(spec.path);
        if (!valid_path.empty()) {
            c.valid = load_parallel_tsv(valid_path);
        } else {
            // hold out the trailing tenth (at least one pair) as validation
            if (c.train.size() < 2)
                throw InputError("corpus too small to split a validation set; pass --valid-data");
            const std::size_t n_valid = std::max<std::size_t>(1, c.train.size() / 10);
            c.valid.pairs.assign(c.train.pairs.end() - static_cast<long>(n_valid),
                                 c.train.pairs.end());
            c.train.pairs.resize(c.train.size() - n_valid);
        }
    }
    c.train.split = "train";
    c.valid.split = "valid";
    return c;
}

ParallelCorpus resolve_eval_corpus(const DataSpec& spec, const SynthOptions& synth,
                                   std::uint64_t seed) {
    ParallelCorpus c;
    if (spec.synth)
        c = synth_task(spec.kind, synth.valid_pairs, synth.min_len, synth.max_len, synth.vocab,
                       mix_seed(seed, 0x7E57));
    else
        c = load_parallel_tsv(spec.path);
    c.split = "test";
    if (c.empty()) throw InputError("evaluation corpus is empty");
    return c;
}

void require_shared_vocab(const Vocab& vocab, const ParallelCorpus& corpus) {
    for (const SentencePair& p : corpus.pairs)
        for (const auto* side : {&p.src, &p.tgt})
            for (const std::string& tok : *side)
                if (vocab.id(tok) == Vocab::kUnk)
                    throw ConfigError("corpus token '" + tok +
                                      "' is not in the checkpoint vocabulary");
}

void write_run_outputs(const fs::path& out_dir, const TrainOutcome& outcome) {
    std::ofstream mf(out_dir / "metrics.ndjson");
    if (!mf) throw IoError("cannot write metrics log under " + out_dir.string());
    for (const EpochRecord& r : outcome.log) mf << epoch_record_json(r) << "\n";
    nlohmann::json summary{{"best_epoch", outcome.best_epoch},
                           {"val_acc", outcome.best_val_acc},
                           {"val_bleu", outcome.best_val_bleu}};
    std::cout << summary.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"attention-aligned knowledge distillation for encoder-decoder transformers"};
    app.require_subcommand(1);

    std::string config_path, data_arg, valid_path, out_dir, teacher_path, ckpt_path, parts;
    SynthOptions synth;
    std::uint64_t seed = 1;
    int epochs = 0;
    int student_layers = 0, student_heads = 0, student_d_model = 0, student_d_ffn = 0;
    double lambda_att = 1.0, mu_kd = 1.0, lambda_decay = 0.9, kd_temperature = 1.0;
    bool layerwise = false, renormalize = false;

    auto add_synth_flags = [&](CLI::App* cmd) {
        cmd->add_option("--synth-pairs", synth.pairs, "synthetic training pairs");
        cmd->add_option("--synth-valid", synth.valid_pairs, "synthetic validation/test pairs");
        cmd->add_option("--synth-min-len", synth.min_len, "min synthetic sentence length");
        cmd->add_option("--synth-max-len", synth.max_len, "max synthetic sentence length");
        cmd->add_option("--synth-vocab", synth.vocab, "synthetic content vocabulary size");
    };

    auto* train_cmd = app.add_subcommand("train-teacher", "train a model with cross-entropy");
    train_cmd->add_option("--config", config_path, "TOML config file");
    train_cmd->add_option("--data", data_arg, "TSV path or synth:<copy|reverse|digit_map>")
        ->required();
    train_cmd->add_option("--valid-data", valid_path, "validation TSV (default: 10% holdout)");
    train_cmd->add_option("--out", out_dir, "output directory")->required();
    train_cmd->add_option("--seed", seed, "random seed");
    train_cmd->add_option("--epochs", epochs, "training epochs");
    add_synth_flags(train_cmd);

    auto* distill_cmd = app.add_subcommand("distill", "distill a student against a teacher");
    distill_cmd->add_option("--config", config_path, "TOML config file");
    distill_cmd->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
    distill_cmd->add_option("--data", data_arg, "TSV path or synth:<kind>")->required();
    distill_cmd->add_option("--valid-data", valid_path, "validation TSV");
    distill_cmd->add_option("--out", out_dir, "output directory")->required();
    distill_cmd->add_option("--seed", seed, "random seed");
    distill_cmd->add_option("--epochs", epochs, "training epochs");
    distill_cmd->add_option("--lambda", lambda_att, "attention loss weight");
    distill_cmd->add_option("--mu", mu_kd, "response KD weight");
    distill_cmd->add_option("--lambda-decay", lambda_decay,
                            "per-epoch exponential decay on lambda");
    distill_cmd->add_option("--kd-temperature", kd_temperature, "KD temperature");
    distill_cmd->add_option("--parts", parts, "stacks to align: enc,dec-self,dec-cross");
    distill_cmd->add_flag("--layerwise", layerwise, "align per-layer head-averaged maps");
    distill_cmd->add_flag("--renormalize-intermediate", renormalize,
                          "renormalize intermediate map rows before the KL");
    distill_cmd->add_option("--student-layers", student_layers,
                            "student encoder and decoder layer count");
    distill_cmd->add_option("--student-heads", student_heads, "student heads per layer");
    distill_cmd->add_option("--student-d-model", student_d_model, "student model width");
    distill_cmd->add_option("--student-d-ffn", student_d_ffn, "student feed-forward width");
    add_synth_flags(distill_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "greedy-decode a test split and score it");
    eval_cmd->add_option("--ckpt", ckpt_path, "model checkpoint")->required();
    eval_cmd->add_option("--data", data_arg, "TSV path or synth:<kind>")->required();
    eval_cmd->add_option("--seed", seed, "seed for synthetic test split");
    add_synth_flags(eval_cmd);

    auto* export_cmd = app.add_subcommand("export-aam", "dump learned |w| per stack as CSV");
    export_cmd->add_option("--ckpt", ckpt_path, "distilled checkpoint with AAM params")
        ->required();
    export_cmd->add_option("--out", out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);

        if (train_cmd->parsed() || distill_cmd->parsed()) {
            CLI::App* cmd = train_cmd->parsed() ? train_cmd : distill_cmd;
            ExperimentConfig cfg;
            if (!config_path.empty()) cfg = load_config_toml(config_path);
            // flags given on the command line win over the config file
            cfg.train.seed = seed;
            if (cmd->count("--epochs")) cfg.train.epochs = epochs;
            if (distill_cmd->parsed()) {
                if (cmd->count("--lambda")) cfg.distill.lambda_att = lambda_att;
                if (cmd->count("--mu")) cfg.distill.mu_kd = mu_kd;
                if (cmd->count("--lambda-decay")) cfg.distill.lambda_decay = lambda_decay;
                if (cmd->count("--kd-temperature")) cfg.distill.kd_temperature = kd_temperature;
                if (student_layers > 0) {
                    cfg.model.n_enc_layers = student_layers;
                    cfg.model.n_dec_layers = student_layers;
                }
                if (student_heads > 0) cfg.model.n_heads = student_heads;
                if (student_d_model > 0) cfg.model.d_model = student_d_model;
                if (student_d_ffn > 0) cfg.model.d_ffn = student_d_ffn;
                if (!parts.empty()) {
                    cfg.distill.apply_enc_self = false;
                    cfg.distill.apply_dec_self = false;
                    cfg.distill.apply_dec_cross = false;
                    std::stringstream ss(parts);
                    std::string part;
                    while (std::getline(ss, part, ',')) {
                        if (part == "enc" || part == "enc-self")
                            cfg.distill.apply_enc_self = true;
                        else if (part == "dec-self")
                            cfg.distill.apply_dec_self = true;
                        else if (part == "dec-cross")
                            cfg.distill.apply_dec_cross = true;
                        else
                            throw ConfigError("unknown --parts entry '" + part +
                                              "' (enc,dec-self,dec-cross)");
                    }
                }
                if (layerwise) cfg.distill.layerwise_variant = true;
                if (renormalize) cfg.distill.renormalize_intermediate = true;
            }

            DataSpec spec = parse_data_arg(data_arg);
            Corpora corpora = resolve_train_corpora(spec, synth, valid_path, cfg.train.seed);
            fs::create_directories(out_dir);

            if (train_cmd->parsed()) {
                ParallelCorpus both = corpora.train;
                both.pairs.insert(both.pairs.end(), corpora.valid.pairs.begin(),
                                  corpora.valid.pairs.end());
                Vocab vocab = vocab_from_corpus(both);
                cfg.model.vocab_size = vocab.size();
                TransformerModel model(cfg.model, cfg.train.seed);
                std::cerr << "training: " << corpora.train.size() << " train / "
                          << corpora.valid.size() << " valid pairs, vocab " << vocab.size()
                          << ", params " << model.param_count() << "\n";
                TrainOutcome outcome = run_training(model, nullptr, nullptr, nullptr, cfg.train,
                                                    corpora.train, corpora.valid, vocab);
                Checkpoint ckpt = checkpoint_from_model(model, vocab);
                save_checkpoint((fs::path(out_dir) / "teacher.a2d").string(), ckpt);
                vocab.save((fs::path(out_dir) / "vocab.txt").string());
                write_run_outputs(out_dir, outcome);
            } else {
                Checkpoint teacher_ckpt = load_checkpoint(teacher_path);
                std::cerr << "distilling: lambda " << cfg.distill.lambda_att << ", mu "
                          << cfg.distill.mu_kd << ", decay " << cfg.distill.lambda_decay
                          << ", parts" << (cfg.distill.apply_enc_self ? " enc-self" : "")
                          << (cfg.distill.apply_dec_self ? " dec-self" : "")
                          << (cfg.distill.apply_dec_cross ? " dec-cross" : "")
                          << (cfg.distill.layerwise_variant ? " (layerwise)" : "") << "\n";
                DistillRunResult res = distill_run(teacher_ckpt, cfg.model, cfg.distill,
                                                   cfg.train, corpora.train, corpora.valid);
                save_checkpoint((fs::path(out_dir) / "student.a2d").string(), res.student_ckpt);
                write_run_outputs(out_dir, res.outcome);
            }
            return 0;
        }

        if (eval_cmd->parsed()) {
            Checkpoint ckpt = load_checkpoint(ckpt_path);
            TransformerModel model = model_from_checkpoint(ckpt);
            Vocab vocab = vocab_from_checkpoint(ckpt);
            DataSpec spec = parse_data_arg(data_arg);
            ParallelCorpus test = resolve_eval_corpus(spec, synth, seed);
            require_shared_vocab(vocab, test);

            std::vector<std::vector<int>> srcs, refs;
            std::size_t max_ref = 0;
            for (const SentencePair& p : test.pairs) {
                std::vector<int> s, r;
                for (const auto& tok : p.src) s.push_back(vocab.id(tok));
                for (const auto& tok : p.tgt) r.push_back(vocab.id(tok));
                max_ref = std::max(max_ref, r.size());
                srcs.push_back(std::move(s));
                refs.push_back(std::move(r));
            }
            const int max_steps = static_cast<int>(std::min<std::size_t>(
                max_ref + 5, static_cast<std::size_t>(model.config().max_len)));
            auto hyps = greedy_decode_batch(model, srcs, max_steps);
            nlohmann::json out{{"bleu", corpus_bleu(hyps, refs).score},
                               {"token_accuracy", token_accuracy(hyps, refs, Vocab::kPad)},
                               {"pairs", test.size()}};
            std::cout << out.dump() << std::endl;
            return 0;
        }

        if (export_cmd->parsed()) {
            Checkpoint ckpt = load_checkpoint(ckpt_path);
            if (!ckpt.has_aam())
                throw InputError("checkpoint " + ckpt_path + " carries no AAM parameters");
            AamSet aams = aams_from_checkpoint(ckpt);
            fs::create_directories(out_dir);

            auto label = [&](char side, int idx, int heads_per_layer) {
                std::ostringstream os;
                if (ckpt.layerwise || heads_per_layer <= 0)
                    os << side << idx;
                else
                    os << side << (idx / heads_per_layer) << "." << (idx % heads_per_layer);
                return os.str();
            };
            auto write_stack = [&](const char* name, const std::optional<AamParams>& p) {
                if (!p) {
                    std::cerr << "note: stack " << name
                              << " has no AAM (excluded at training); skipped\n";
                    return;
                }
                const fs::path path = fs::path(out_dir) / (std::string(name) + ".csv");
                std::ofstream f(path);
                if (!f) throw IoError("cannot write " + path.string());
                f << "head";
                for (int j = 0; j < p->in_channels; ++j)
                    f << "," << label('s', j, ckpt.model.n_heads);
                f << "\n";
                for (int c = 0; c < p->out_channels; ++c) {
                    f << label('t', c, ckpt.teacher.n_heads);
                    for (int j = 0; j < p->in_channels; ++j)
                        f << ","
                          << std::abs(
                                 p->w.data()[static_cast<std::size_t>(c * p->in_channels + j)]);
                    f << "\n";
                }
                std::cerr << "wrote " << path.string() << " (" << p->out_channels << " rows x "
                          << p->in_channels << " cols)\n";
            };
            write_stack("enc_self", aams.enc_self);
            write_stack("dec_self", aams.dec_self);
            write_stack("dec_cross", aams.dec_cross);
            return 0;
        }
        return 2;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
