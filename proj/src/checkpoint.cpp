#include "a2d/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

#include "a2d/error.hpp"

namespace a2d {

namespace {

constexpr char kMagic[8] = {'A', '2', 'D', 'C', 'K', 'P', 'T', '1'};

nlohmann::json model_to_json(const ModelConfig& m) {
    return {{"n_enc_layers", m.n_enc_layers}, {"n_dec_layers", m.n_dec_layers},
            {"n_heads", m.n_heads},           {"d_model", m.d_model},
            {"d_ffn", m.d_ffn},               {"vocab_size", m.vocab_size},
            {"max_len", m.max_len},           {"dropout_rate", m.dropout_rate}};
}

ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig m;
    m.n_enc_layers = j.at("n_enc_layers").get<int>();
    m.n_dec_layers = j.at("n_dec_layers").get<int>();
    m.n_heads = j.at("n_heads").get<int>();
    m.d_model = j.at("d_model").get<int>();
    m.d_ffn = j.at("d_ffn").get<int>();
    m.vocab_size = j.at("vocab_size").get<int>();
    m.max_len = j.at("max_len").get<int>();
    m.dropout_rate = j.at("dropout_rate").get<double>();
    return m;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["model"] = model_to_json(ckpt.model);
    header["vocab"] = ckpt.vocab_tokens;
    header["aam_stacks"] = ckpt.aam_stacks;
    header["layerwise"] = ckpt.layerwise;
    if (ckpt.has_aam())
        header["teacher"] = {{"n_heads", ckpt.teacher.n_heads},
                             {"n_enc_layers", ckpt.teacher.n_enc_layers},
                             {"n_dec_layers", ckpt.teacher.n_dec_layers}};
    nlohmann::json manifest = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : ckpt.params) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
    }
    header["params"] = std::move(manifest);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write(kMagic, sizeof(kMagic));
    const std::string json_bytes = header.dump();
    write_u64_le(f, json_bytes.size());
    f.write(json_bytes.data(), static_cast<std::streamsize>(json_bytes.size()));
    std::vector<float> buf;
    for (const auto& [name, t] : ckpt.params) {
        buf.resize(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.data()[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw IoError("short write to checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError(path + " is not an A2D checkpoint (bad magic)");
    const std::uint64_t json_len = read_u64_le(f);
    std::string json_bytes(json_len, '\0');
    f.read(json_bytes.data(), static_cast<std::streamsize>(json_len));
    if (!f) throw IoError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(json_bytes);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": malformed header: " + e.what());
    }

    Checkpoint ckpt;
    try {
        ckpt.model = model_from_json(header.at("model"));
        ckpt.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
        ckpt.aam_stacks = header.at("aam_stacks").get<std::vector<std::string>>();
        ckpt.layerwise = header.at("layerwise").get<bool>();
        if (header.contains("teacher")) {
            const auto& t = header.at("teacher");
            ckpt.teacher.n_heads = t.at("n_heads").get<int>();
            ckpt.teacher.n_enc_layers = t.at("n_enc_layers").get<int>();
            ckpt.teacher.n_dec_layers = t.at("n_dec_layers").get<int>();
        }
        const std::streampos blob_start = f.tellg();
        std::vector<float> buf;
        for (const auto& entry : header.at("params")) {
            const std::string name = entry.at("name").get<std::string>();
            const Shape shape = entry.at("shape").get<Shape>();
            const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
            const std::size_t n = numel(shape);
            buf.resize(n);
            f.seekg(blob_start + static_cast<std::streamoff>(offset));
            f.read(reinterpret_cast<char*>(buf.data()),
                   static_cast<std::streamsize>(n * sizeof(float)));
            if (!f) throw IoError(path + ": truncated blob for parameter " + name);
            std::vector<double> values(n);
            for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<double>(buf[i]);
            ckpt.params.emplace_back(name, Tensor::from(shape, std::move(values)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": malformed header: " + e.what());
    }
    return ckpt;
}

Checkpoint checkpoint_from_model(const TransformerModel& model, const Vocab& vocab) {
    Checkpoint ckpt;
    ckpt.model = model.config();
    ckpt.vocab_tokens = vocab.content_tokens();
    for (const auto& [name, t] : model.parameters()) ckpt.params.emplace_back(name, t.detached());
    return ckpt;
}

TransformerModel model_from_checkpoint(const Checkpoint& ckpt) {
    TransformerModel model(ckpt.model, /*seed=*/0);
    for (auto& [name, param] : model.parameters()) {
        const Tensor* found = nullptr;
        for (const auto& [cname, ct] : ckpt.params)
            if (cname == name) {
                found = &ct;
                break;
            }
        if (!found) throw IoError("checkpoint is missing parameter " + name);
        if (found->shape() != param.shape())
            throw IoError("checkpoint parameter " + name + " has shape " +
                          shape_str(found->shape()) + ", model expects " +
                          shape_str(param.shape()));
        param.data() = found->data();
    }
    return model;
}

AamSet aams_from_checkpoint(const Checkpoint& ckpt) {
    AamSet set;
    auto find = [&](const std::string& name) -> const Tensor* {
        for (const auto& [n, t] : ckpt.params)
            if (n == name) return &t;
        return nullptr;
    };
    for (const std::string& stack : ckpt.aam_stacks) {
        const Tensor* w = find("aam." + stack + ".w");
        const Tensor* b = find("aam." + stack + ".b");
        if (!w || !b) throw IoError("checkpoint lists AAM stack " + stack + " but lacks params");
        AamParams p;
        p.w = Tensor::from(w->shape(), w->data());
        p.b = Tensor::from(b->shape(), b->data());
        p.out_channels = static_cast<int>(w->dim(0));
        p.in_channels = static_cast<int>(w->dim(1));
        if (stack == "enc_self")
            set.enc_self = std::move(p);
        else if (stack == "dec_self")
            set.dec_self = std::move(p);
        else if (stack == "dec_cross")
            set.dec_cross = std::move(p);
        else
            throw IoError("checkpoint names unknown AAM stack " + stack);
    }
    return set;
}

void append_aams(Checkpoint& ckpt, const AamSet& aams, bool layerwise) {
    auto put = [&](const char* stack, const std::optional<AamParams>& p) {
        if (!p) return;
        ckpt.params.emplace_back("aam." + std::string(stack) + ".w", p->w.detached());
        ckpt.params.emplace_back("aam." + std::string(stack) + ".b", p->b.detached());
        ckpt.aam_stacks.emplace_back(stack);
    };
    put("enc_self", aams.enc_self);
    put("dec_self", aams.dec_self);
    put("dec_cross", aams.dec_cross);
    ckpt.layerwise = layerwise;
}

Vocab vocab_from_checkpoint(const Checkpoint& ckpt) { return Vocab(ckpt.vocab_tokens); }

}  // namespace a2d
