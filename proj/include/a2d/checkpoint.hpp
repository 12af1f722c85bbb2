#pragma once

#include <string>
#include <utility>
#include <vector>

#include "a2d/distill.hpp"
#include "a2d/tensor.hpp"
#include "a2d/transformer.hpp"

namespace a2d {

// On disk: 8-byte magic "A2DCKPT1", a little-endian u64 byte length, the
// UTF-8 JSON header (config, vocab, named-parameter manifest with shapes and
// byte offsets), then the float32 little-endian parameter blobs in manifest
// order. AAM parameters ride along under "aam.<stack>.{w,b}" names; they are
// export/analysis data, not inference weights.
struct Checkpoint {
    // teacher stack geometry, kept so AAM channel indices can be labeled
    struct TeacherInfo {
        int n_heads = 0;
        int n_enc_layers = 0;
        int n_dec_layers = 0;
    };

    ModelConfig model;
    std::vector<std::string> vocab_tokens;  // content tokens, id = index + reserved
    std::vector<std::pair<std::string, Tensor>> params;
    std::vector<std::string> aam_stacks;  // subset of {enc_self, dec_self, dec_cross}
    bool layerwise = false;
    TeacherInfo teacher;

    bool has_aam() const { return !aam_stacks.empty(); }
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_model(const TransformerModel& model, const Vocab& vocab);

// Rebuilds the model from non-AAM entries; complains about missing or
// misshapen parameters.
TransformerModel model_from_checkpoint(const Checkpoint& ckpt);

// Pulls "aam.<stack>.{w,b}" entries back into AamParams.
AamSet aams_from_checkpoint(const Checkpoint& ckpt);

void append_aams(Checkpoint& ckpt, const AamSet& aams, bool layerwise);

Vocab vocab_from_checkpoint(const Checkpoint& ckpt);

}  // namespace a2d
