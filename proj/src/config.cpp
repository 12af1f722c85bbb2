#include "a2d/config.hpp"

#include <fstream>

#include "a2d/error.hpp"

namespace a2d {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const unsigned long long out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not an unsigned integer");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("config key '" + key + "': '" + v + "' is not true/false");
}

}  // namespace

void apply_config_kv(ExperimentConfig& cfg, const std::string& section, const std::string& key,
                     const std::string& value) {
    const std::string full = section + "." + key;
    if (section == "model") {
        if (key == "n_enc_layers") cfg.model.n_enc_layers = to_int(full, value);
        else if (key == "n_dec_layers") cfg.model.n_dec_layers = to_int(full, value);
        else if (key == "n_heads") cfg.model.n_heads = to_int(full, value);
        else if (key == "d_model") cfg.model.d_model = to_int(full, value);
        else if (key == "d_ffn") cfg.model.d_ffn = to_int(full, value);
        else if (key == "vocab_size") cfg.model.vocab_size = to_int(full, value);
        else if (key == "max_len") cfg.model.max_len = to_int(full, value);
        else if (key == "dropout_rate") cfg.model.dropout_rate = to_double(full, value);
        else throw ConfigError("unknown config key '" + full + "'");
    } else if (section == "train") {
        if (key == "epochs") cfg.train.epochs = to_int(full, value);
        else if (key == "batch_size") cfg.train.batch_size = to_int(full, value);
        else if (key == "learning_rate") cfg.train.learning_rate = to_double(full, value);
        else if (key == "beta1") cfg.train.beta1 = to_double(full, value);
        else if (key == "beta2") cfg.train.beta2 = to_double(full, value);
        else if (key == "adam_eps") cfg.train.adam_eps = to_double(full, value);
        else if (key == "warmup_steps") cfg.train.warmup_steps = to_int(full, value);
        else if (key == "grad_clip_norm") cfg.train.grad_clip_norm = to_double(full, value);
        else if (key == "seed") cfg.train.seed = to_u64(full, value);
        else throw ConfigError("unknown config key '" + full + "'");
    } else if (section == "distill") {
        if (key == "lambda") cfg.distill.lambda_att = to_double(full, value);
        else if (key == "mu") cfg.distill.mu_kd = to_double(full, value);
        else if (key == "lambda_decay") cfg.distill.lambda_decay = to_double(full, value);
        else if (key == "kd_temperature") cfg.distill.kd_temperature = to_double(full, value);
        else if (key == "enc_self") cfg.distill.apply_enc_self = to_bool(full, value);
        else if (key == "dec_self") cfg.distill.apply_dec_self = to_bool(full, value);
        else if (key == "dec_cross") cfg.distill.apply_dec_cross = to_bool(full, value);
        else if (key == "layerwise") cfg.distill.layerwise_variant = to_bool(full, value);
        else if (key == "renormalize_intermediate")
            cfg.distill.renormalize_intermediate = to_bool(full, value);
        else throw ConfigError("unknown config key '" + full + "'");
    } else {
        throw ConfigError("unknown config section '" + section + "'");
    }
}

ExperimentConfig load_config_toml(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config file " + path);
    ExperimentConfig cfg;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto comment = line.find('#');
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (section.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside any section");
        apply_config_kv(cfg, section, key, value);
    }
    return cfg;
}

}  // namespace a2d
