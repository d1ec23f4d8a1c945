#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tinydetr/checkpoint.hpp"
#include "tinydetr/config.hpp"
#include "tinydetr/labels.hpp"
#include "tinydetr/tensor.hpp"

namespace tinydetr {

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t num_encoder_layers = 2;
    std::size_t num_decoder_layers = 2;
    std::size_t num_heads = 4;
    std::size_t num_queries = 10;
    std::size_t num_classes = kNumClasses;
    std::size_t ffn_hidden = 128;
    std::size_t patch_size = 8;
    std::size_t image_height = 128;
    std::size_t image_width = 128;

    // the configuration this project trains at
    static ModelConfig desk();
    // full-scale reference configuration (256-wide, 6+6 layers, 8 heads,
    // 100 queries); kept as a named preset, not trained here
    static ModelConfig full_scale();
    // keys mirror the field names exactly; unset keys keep the base values
    static ModelConfig from_config(KvConfig& config, ModelConfig base);
    static ModelConfig from_config(KvConfig& config);

    void validate() const;
    std::size_t grid_h() const { return image_height / patch_size; }
    std::size_t grid_w() const { return image_width / patch_size; }
    std::size_t tokens() const { return grid_h() * grid_w(); }
};

struct LinearLayer {
    Tensor weight;  // [fan_in, fan_out]
    Tensor bias;    // [fan_out]
};
Tensor linear(const LinearLayer& layer, const Tensor& x);

struct NormLayer {
    Tensor gain, bias;  // [width]
};

struct AttentionParams {
    LinearLayer query, key, value, output;
};

// Scaled dot-product attention with `num_heads` heads over rank-2 token
// tensors ([tokens, width]). Keys and values must agree in token count.
// When `weights_out` is given it receives the post-softmax attention
// weights, shape [heads, query_tokens, key_tokens].
Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            std::size_t num_heads, const AttentionParams& params,
                            Tensor* weights_out = nullptr);

// Fixed sinusoidal two-dimensional positional encoding, [grid_h*grid_w,
// d_model]. First half of each vector encodes the column, second half the
// row; within a half, sine/cosine pairs over a geometric frequency ladder.
Tensor positional_encoding_2d(std::size_t grid_h, std::size_t grid_w, std::size_t d_model);

struct EncoderLayer {
    AttentionParams attn;
    NormLayer norm1;
    LinearLayer ffn1, ffn2;
    NormLayer norm2;
};
// self-attention (positional encoding on queries/keys only) -> add&norm ->
// FFN -> add&norm
Tensor encoder_layer_forward(const EncoderLayer& layer, const Tensor& x, const Tensor& pos,
                             std::size_t num_heads);

struct DecoderLayer {
    AttentionParams self_attn;
    NormLayer norm1;
    AttentionParams cross_attn;
    NormLayer norm2;
    LinearLayer ffn1, ffn2;
    NormLayer norm3;
};
// parallel decoding: self-attention over all queries at once (no causal
// mask) -> add&norm -> cross-attention into the memory (positional encoding
// on the keys) -> add&norm -> FFN -> add&norm
Tensor decoder_layer_forward(const DecoderLayer& layer, const Tensor& x, const Tensor& memory,
                             const Tensor& pos, std::size_t num_heads);

// One fixed-size set of predictions: always num_queries rows, class index
// num_classes means "no object".
struct PredictionSet {
    Tensor class_logits;  // [N, C+1]
    Tensor boxes;         // [N, 4] normalized center form, sigmoid-bounded
};

struct NamedParam {
    std::string name;
    Tensor tensor;
    bool backbone = false;  // patch embedding; trains with its own rate
};

class Detector {
public:
    Detector(const ModelConfig& config, std::uint64_t seed);

    // image [3, H, W] -> memory [S, d_model]
    Tensor encode(const Tensor& image) const;
    // memory [S, d_model] -> fixed-size prediction set
    PredictionSet decode(const Tensor& memory) const;
    // one prediction set per decoder layer (the shared heads applied to each
    // layer's output); the last element equals decode(memory). Training uses
    // the early sets as auxiliary losses, inference only the last.
    std::vector<PredictionSet> decode_layers(const Tensor& memory) const;
    PredictionSet forward(const Tensor& image) const;

    // tensors alias the live parameters; ordering is stable
    std::vector<NamedParam> parameters() const;
    const ModelConfig& config() const { return config_; }
    const Tensor& positional_encoding() const { return pos_; }

    // "model.<name>" weight entries plus "config.<field>" scalars
    void save_into(Checkpoint& checkpoint) const;
    static Detector from_checkpoint(const Checkpoint& checkpoint);

private:
    PredictionSet predict(const Tensor& decoded) const;

    ModelConfig config_;
    Tensor pos_;  // fixed, not trained
    LinearLayer patch_;
    Tensor queries_;  // [N, d_model]
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
    LinearLayer class_head_;
    LinearLayer box_head1_, box_head2_, box_head3_;
};

}  // namespace tinydetr
