#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "swtt/attention_mask.hpp"
#include "swtt/autodiff.hpp"
#include "swtt/codec.hpp"

namespace swtt {

class KVCache;

// Architecture switches of the stability study. All off is the basic block
// (pre-norm LayerNorm, GELU FFN, bf16-rounded head); all on is the full block.
struct BlockVariant {
    bool high_precision_head = true;
    bool sandwich_norm = true;
    bool swiglu = true;

    friend bool operator==(const BlockVariant&, const BlockVariant&) = default;
};

struct ModelConfig {
    std::size_t depth = 2;
    std::size_t width = 32;
    std::size_t heads = 2;
    std::size_t ffn_hidden = 64;
    std::size_t vocab = 32;     // codebook size V
    std::size_t channels = 3;   // latent channels C
    std::size_t text_width = 32;
    std::vector<std::string> prompt_vocab{"<null>"};  // entry 0 is the null token
    ScaleSchedule schedule = ScaleSchedule({{1, 1}});
    AttentionRegime regime = AttentionRegime::BlockDiagonal;
    double rope_theta = 10000.0;
    std::size_t rope_max_size = 128;
    BlockVariant variant;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return width / heads; }
    void validate() const;
};

using KeyValues = std::map<std::string, std::string>;
KeyValues config_to_kv(const ModelConfig& c);
ModelConfig config_from_kv(const KeyValues& kv);

struct CropCoords {
    double top = 0.0;
    double left = 0.0;
};

inline constexpr std::size_t kCropFrequencies = 8;
inline constexpr std::size_t kCropFeatures = 4 * kCropFrequencies;

// sin/cos at frequencies 2^0..2^7 of each coordinate normalized by the canvas.
Tensor crop_fourier_features(const CropCoords& crop, GridSize canvas);

// Condition tokens [L, text_width], their mean as the pooled vector [1, text_width],
// and optional crop coordinates.
struct ConditionBundle {
    Var tokens;
    Var pooled;
    std::optional<CropCoords> crop;
    std::vector<std::size_t> ids;

    std::size_t length() const { return tokens.value().dim(0); }
};

struct Linear {
    Var w;  // [in, out]
    Var b;  // [out]

    Var operator()(const Var& x) const;
};

struct BlockParams {
    Linear ada;  // SiLU(pooled) -> 6 * width modulation, zero-initialized
    Linear q, k, v, o;
    Var q_gain, k_gain;
    Linear cq, ck, cv, co;
    Var cq_gain, ck_gain;
    Linear ffn_in, ffn_gate, ffn_out;  // ffn_gate unused without SwiGLU
    Var post_attn_gain, post_cross_gain, post_ffn_gain;  // sandwich only
};

// Attention-probability taps. `row` is the query row within the forward batch
// and `k_begin` the first key row; for cross-attention keys index the
// concatenated condition tokens of the batch.
struct AttentionRecorder {
    std::function<void(std::size_t block, std::size_t head, std::size_t row, std::size_t k_begin,
                       std::span<const double> probs)>
        self_attention;
    std::function<void(std::size_t block, std::size_t head, std::size_t row, std::size_t k_begin,
                       std::span<const double> probs)>
        cross_attention;
};

struct ForwardOptions {
    KVCache* cache = nullptr;  // block-causal incremental decoding, batch of one
    AttentionRecorder* recorder = nullptr;
    std::vector<double>* block_norms = nullptr;  // mean row L2 norm after each block
    Precision block_precision = Precision::Double;
};

// Inputs for one sample over the scale range [first, last]. maps[s - first] is
// the accumulated prefix map of scale s as [h_s * w_s, C] rows; it is ignored
// for scale 0, which uses the start token.
struct ScaleInputs {
    std::vector<Tensor> maps;
};

class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }

    ConditionBundle encode_condition(std::span<const std::size_t> ids, std::optional<CropCoords> crop = {}) const;
    ConditionBundle encode_prompt(const std::string& prompt, std::optional<CropCoords> crop = {}) const;
    ConditionBundle null_condition() const;
    std::vector<std::size_t> tokenize(const std::string& prompt) const;

    // Logits [B * T, V] for scales [first, last] of every sample, rows ordered
    // sample-major then scale then position.
    Var forward(std::span<const ConditionBundle> conds, std::span<const ScaleInputs> inputs, std::size_t first,
                std::size_t last, const ForwardOptions& opts = {}) const;

    // Final normalization and projection; double precision unless the variant
    // disables the high-precision head.
    Var head_logits(const Var& x) const;

    std::vector<std::pair<std::string, Var>> named_parameters() const;
    std::size_t parameter_count() const;
    Var parameter(const std::string& name) const;

    // Sets every sublayer output projection (self, cross, FFN) to zero.
    void zero_sublayer_outputs();

    Model clone() const;

private:
    Var pooled_with_crop(const ConditionBundle& c) const;
    Var embed_inputs(std::span<const ConditionBundle> conds, std::span<const ScaleInputs> inputs, std::size_t first,
                     std::size_t last) const;

    ModelConfig config_;
    Var prompt_table_;  // [prompt vocab, text_width]
    Linear crop_proj_;
    Var start_;         // [1, width]
    Linear start_proj_;
    Linear input_proj_;
    Var level_;         // [N, width]
    Var position_;      // [total tokens, width]
    std::vector<BlockParams> blocks_;
    Var head_gain_;
    Linear head_;
};

// Per-block mean L2 activation norms for one forward pass.
std::vector<double> activation_norm_probe(const Model& model, std::span<const ConditionBundle> conds,
                                          std::span<const ScaleInputs> inputs);

}  // namespace swtt
