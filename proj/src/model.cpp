#include "tinydetr/model.hpp"

#include <cmath>
#include <stdexcept>

#include "tinydetr/errors.hpp"
#include "tinydetr/rng.hpp"

namespace tinydetr {

namespace {

LinearLayer make_linear(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed,
                        const std::string& name) {
    Rng rng(derive_seed(seed, name));
    LinearLayer l;
    l.weight = Tensor::randn({fan_in, fan_out}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)),
                             true);
    l.bias = Tensor::zeros({fan_out}, true);
    return l;
}

NormLayer make_norm(std::size_t width) {
    NormLayer n;
    n.gain = Tensor({width}, 1.0, true);
    n.bias = Tensor::zeros({width}, true);
    return n;
}

AttentionParams make_attention(std::size_t d, std::uint64_t seed, const std::string& name) {
    AttentionParams p;
    p.query = make_linear(d, d, seed, name + ".q");
    p.key = make_linear(d, d, seed, name + ".k");
    p.value = make_linear(d, d, seed, name + ".v");
    p.output = make_linear(d, d, seed, name + ".out");
    return p;
}

Tensor ffn_forward(const LinearLayer& a, const LinearLayer& b, const Tensor& x) {
    return linear(b, relu(linear(a, x)));
}

}  // namespace

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full_scale() {
    ModelConfig c;
    c.d_model = 256;
    c.num_encoder_layers = 6;
    c.num_decoder_layers = 6;
    c.num_heads = 8;
    c.num_queries = 100;
    c.num_classes = kNumClasses;
    c.ffn_hidden = 2048;
    c.patch_size = 8;
    c.image_height = 128;
    c.image_width = 128;
    return c;
}

ModelConfig ModelConfig::from_config(KvConfig& config, ModelConfig base) {
    ModelConfig c = base;
    c.d_model = static_cast<std::size_t>(config.get_uint("d_model", c.d_model));
    c.num_encoder_layers =
        static_cast<std::size_t>(config.get_uint("num_encoder_layers", c.num_encoder_layers));
    c.num_decoder_layers =
        static_cast<std::size_t>(config.get_uint("num_decoder_layers", c.num_decoder_layers));
    c.num_heads = static_cast<std::size_t>(config.get_uint("num_heads", c.num_heads));
    c.num_queries = static_cast<std::size_t>(config.get_uint("num_queries", c.num_queries));
    c.num_classes = static_cast<std::size_t>(config.get_uint("num_classes", c.num_classes));
    c.ffn_hidden = static_cast<std::size_t>(config.get_uint("ffn_hidden", c.ffn_hidden));
    c.patch_size = static_cast<std::size_t>(config.get_uint("patch_size", c.patch_size));
    c.image_height = static_cast<std::size_t>(config.get_uint("image_height", c.image_height));
    c.image_width = static_cast<std::size_t>(config.get_uint("image_width", c.image_width));
    c.validate();
    return c;
}

ModelConfig ModelConfig::from_config(KvConfig& config) { return from_config(config, ModelConfig{}); }

void ModelConfig::validate() const {
    if (d_model == 0 || num_heads == 0 || num_queries == 0 || ffn_hidden == 0 ||
        patch_size == 0 || image_height == 0 || image_width == 0) {
        throw DataError("model config: all size fields must be positive");
    }
    if (num_classes < 1) {
        throw DataError("model config: need at least one class");
    }
    if (d_model % num_heads != 0) {
        throw DataError("model config: d_model " + std::to_string(d_model) +
                        " is not divisible by num_heads " + std::to_string(num_heads));
    }
    if (d_model % 4 != 0) {
        throw DataError("model config: d_model must be divisible by 4 for the "
                        "two-dimensional positional encoding");
    }
    if (image_height % patch_size != 0 || image_width % patch_size != 0) {
        throw DataError("model config: image " + std::to_string(image_width) + "x" +
                        std::to_string(image_height) + " is not divisible by patch_size " +
                        std::to_string(patch_size));
    }
}

Tensor linear(const LinearLayer& layer, const Tensor& x) {
    return add(matmul(x, layer.weight), layer.bias);
}

Tensor multi_head_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                            std::size_t num_heads, const AttentionParams& params,
                            Tensor* weights_out) {
    if (queries.ndim() != 2 || keys.ndim() != 2 || values.ndim() != 2) {
        throw std::invalid_argument("multi_head_attention: expected rank-2 token tensors");
    }
    const std::size_t d = queries.shape()[1];
    if (keys.shape()[1] != d || values.shape()[1] != d) {
        throw std::invalid_argument("multi_head_attention: feature widths differ");
    }
    if (num_heads == 0 || d % num_heads != 0) {
        throw std::invalid_argument("multi_head_attention: width " + std::to_string(d) +
                                    " is not divisible by " + std::to_string(num_heads) +
                                    " heads");
    }
    if (keys.shape()[0] != values.shape()[0]) {
        throw std::invalid_argument("multi_head_attention: key/value token counts differ");
    }
    const std::size_t nq = queries.shape()[0];
    const std::size_t nk = keys.shape()[0];
    const std::size_t dh = d / num_heads;

    const Tensor q = transpose(reshape(linear(params.query, queries), {nq, num_heads, dh}), 0, 1);
    const Tensor k = transpose(reshape(linear(params.key, keys), {nk, num_heads, dh}), 0, 1);
    const Tensor v = transpose(reshape(linear(params.value, values), {nk, num_heads, dh}), 0, 1);

    const Tensor scores =
        mul(matmul(q, transpose(k, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh)));
    const Tensor attn = softmax(scores, 2);  // [heads, nq, nk]
    if (weights_out != nullptr) {
        *weights_out = attn;
    }
    const Tensor context = reshape(transpose(matmul(attn, v), 0, 1), {nq, d});
    return linear(params.output, context);
}

Tensor positional_encoding_2d(std::size_t grid_h, std::size_t grid_w, std::size_t d_model) {
    if (grid_h == 0 || grid_w == 0) {
        throw std::invalid_argument("positional_encoding_2d: empty grid");
    }
    if (d_model % 4 != 0) {
        throw std::invalid_argument("positional_encoding_2d: d_model " +
                                    std::to_string(d_model) + " is not divisible by 4");
    }
    const std::size_t half = d_model / 2;
    const std::size_t quarter = d_model / 4;
    std::vector<double> data(grid_h * grid_w * d_model);
    for (std::size_t r = 0; r < grid_h; ++r) {
        for (std::size_t c = 0; c < grid_w; ++c) {
            double* row = data.data() + (r * grid_w + c) * d_model;
            for (std::size_t k = 0; k < quarter; ++k) {
                const double omega =
                    std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(half));
                row[2 * k] = std::sin(static_cast<double>(c) * omega);
                row[2 * k + 1] = std::cos(static_cast<double>(c) * omega);
                row[half + 2 * k] = std::sin(static_cast<double>(r) * omega);
                row[half + 2 * k + 1] = std::cos(static_cast<double>(r) * omega);
            }
        }
    }
    return Tensor({grid_h * grid_w, d_model}, std::move(data));
}

Tensor encoder_layer_forward(const EncoderLayer& layer, const Tensor& x, const Tensor& pos,
                             std::size_t num_heads) {
    const Tensor qk = add(x, pos);
    const Tensor attended = multi_head_attention(qk, qk, x, num_heads, layer.attn);
    const Tensor h = layer_norm(add(x, attended), layer.norm1.gain, layer.norm1.bias, 1);
    const Tensor fed = ffn_forward(layer.ffn1, layer.ffn2, h);
    return layer_norm(add(h, fed), layer.norm2.gain, layer.norm2.bias, 1);
}

Tensor decoder_layer_forward(const DecoderLayer& layer, const Tensor& x, const Tensor& memory,
                             const Tensor& pos, std::size_t num_heads) {
    const Tensor self_attended = multi_head_attention(x, x, x, num_heads, layer.self_attn);
    const Tensor h1 = layer_norm(add(x, self_attended), layer.norm1.gain, layer.norm1.bias, 1);
    const Tensor mem_keys = add(memory, pos);
    const Tensor cross =
        multi_head_attention(h1, mem_keys, memory, num_heads, layer.cross_attn);
    const Tensor h2 = layer_norm(add(h1, cross), layer.norm2.gain, layer.norm2.bias, 1);
    const Tensor fed = ffn_forward(layer.ffn1, layer.ffn2, h2);
    return layer_norm(add(h2, fed), layer.norm3.gain, layer.norm3.bias, 1);
}

Detector::Detector(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const std::size_t d = config_.d_model;
    pos_ = positional_encoding_2d(config_.grid_h(), config_.grid_w(), d);
    patch_ = make_linear(3 * config_.patch_size * config_.patch_size, d, seed, "backbone.patch");
    Rng qrng(derive_seed(seed, "queries"));
    queries_ = Tensor::randn({config_.num_queries, d}, qrng, 1.0, true);
    for (std::size_t i = 0; i < config_.num_encoder_layers; ++i) {
        const std::string base = "encoder." + std::to_string(i);
        EncoderLayer l;
        l.attn = make_attention(d, seed, base + ".attn");
        l.norm1 = make_norm(d);
        l.ffn1 = make_linear(d, config_.ffn_hidden, seed, base + ".ffn1");
        l.ffn2 = make_linear(config_.ffn_hidden, d, seed, base + ".ffn2");
        l.norm2 = make_norm(d);
        encoder_.push_back(std::move(l));
    }
    for (std::size_t i = 0; i < config_.num_decoder_layers; ++i) {
        const std::string base = "decoder." + std::to_string(i);
        DecoderLayer l;
        l.self_attn = make_attention(d, seed, base + ".self");
        l.norm1 = make_norm(d);
        l.cross_attn = make_attention(d, seed, base + ".cross");
        l.norm2 = make_norm(d);
        l.ffn1 = make_linear(d, config_.ffn_hidden, seed, base + ".ffn1");
        l.ffn2 = make_linear(config_.ffn_hidden, d, seed, base + ".ffn2");
        l.norm3 = make_norm(d);
        decoder_.push_back(std::move(l));
    }
    class_head_ = make_linear(d, config_.num_classes + 1, seed, "head.class");
    box_head1_ = make_linear(d, d, seed, "head.box1");
    box_head2_ = make_linear(d, d, seed, "head.box2");
    box_head3_ = make_linear(d, 4, seed, "head.box3");
}

Tensor Detector::encode(const Tensor& image) const {
    const Tensor patches = image_to_patches(image, config_.patch_size);
    if (patches.shape()[0] != config_.tokens()) {
        throw DataError("encode: image yields " + std::to_string(patches.shape()[0]) +
                        " patches but the model expects " + std::to_string(config_.tokens()) +
                        "; resize to " + std::to_string(config_.image_width) + "x" +
                        std::to_string(config_.image_height));
    }
    Tensor x = linear(patch_, patches);
    for (const EncoderLayer& l : encoder_) {
        x = encoder_layer_forward(l, x, pos_, config_.num_heads);
    }
    return x;
}

PredictionSet Detector::decode(const Tensor& memory) const {
    Tensor y = queries_;
    for (const DecoderLayer& l : decoder_) {
        y = decoder_layer_forward(l, y, memory, pos_, config_.num_heads);
    }
    return predict(y);
}

std::vector<PredictionSet> Detector::decode_layers(const Tensor& memory) const {
    std::vector<PredictionSet> out;
    out.reserve(decoder_.size());
    Tensor y = queries_;
    for (const DecoderLayer& l : decoder_) {
        y = decoder_layer_forward(l, y, memory, pos_, config_.num_heads);
        out.push_back(predict(y));
    }
    return out;
}

PredictionSet Detector::predict(const Tensor& decoded) const {
    PredictionSet out;
    out.class_logits = linear(class_head_, decoded);
    const Tensor h = relu(linear(box_head2_, relu(linear(box_head1_, decoded))));
    out.boxes = sigmoid(linear(box_head3_, h));
    return out;
}

PredictionSet Detector::forward(const Tensor& image) const { return decode(encode(image)); }

std::vector<NamedParam> Detector::parameters() const {
    std::vector<NamedParam> out;
    const auto push = [&out](const std::string& name, const Tensor& t, bool backbone = false) {
        out.push_back(NamedParam{name, t, backbone});
    };
    const auto push_linear = [&push](const std::string& name, const LinearLayer& l,
                                     bool backbone = false) {
        push(name + ".weight", l.weight, backbone);
        push(name + ".bias", l.bias, backbone);
    };
    const auto push_norm = [&push](const std::string& name, const NormLayer& n) {
        push(name + ".gain", n.gain);
        push(name + ".bias", n.bias);
    };
    const auto push_attention = [&push_linear](const std::string& name,
                                               const AttentionParams& a) {
        push_linear(name + ".q", a.query);
        push_linear(name + ".k", a.key);
        push_linear(name + ".v", a.value);
        push_linear(name + ".out", a.output);
    };

    push_linear("backbone.patch", patch_, true);
    push("queries", queries_);
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        const std::string base = "encoder." + std::to_string(i);
        push_attention(base + ".attn", encoder_[i].attn);
        push_norm(base + ".norm1", encoder_[i].norm1);
        push_linear(base + ".ffn1", encoder_[i].ffn1);
        push_linear(base + ".ffn2", encoder_[i].ffn2);
        push_norm(base + ".norm2", encoder_[i].norm2);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
        const std::string base = "decoder." + std::to_string(i);
        push_attention(base + ".self", decoder_[i].self_attn);
        push_norm(base + ".norm1", decoder_[i].norm1);
        push_attention(base + ".cross", decoder_[i].cross_attn);
        push_norm(base + ".norm2", decoder_[i].norm2);
        push_linear(base + ".ffn1", decoder_[i].ffn1);
        push_linear(base + ".ffn2", decoder_[i].ffn2);
        push_norm(base + ".norm3", decoder_[i].norm3);
    }
    push_linear("head.class", class_head_);
    push_linear("head.box1", box_head1_);
    push_linear("head.box2", box_head2_);
    push_linear("head.box3", box_head3_);
    return out;
}

void Detector::save_into(Checkpoint& checkpoint) const {
    put_scalar(checkpoint, "config.d_model", static_cast<double>(config_.d_model));
    put_scalar(checkpoint, "config.num_encoder_layers",
               static_cast<double>(config_.num_encoder_layers));
    put_scalar(checkpoint, "config.num_decoder_layers",
               static_cast<double>(config_.num_decoder_layers));
    put_scalar(checkpoint, "config.num_heads", static_cast<double>(config_.num_heads));
    put_scalar(checkpoint, "config.num_queries", static_cast<double>(config_.num_queries));
    put_scalar(checkpoint, "config.num_classes", static_cast<double>(config_.num_classes));
    put_scalar(checkpoint, "config.ffn_hidden", static_cast<double>(config_.ffn_hidden));
    put_scalar(checkpoint, "config.patch_size", static_cast<double>(config_.patch_size));
    put_scalar(checkpoint, "config.image_height", static_cast<double>(config_.image_height));
    put_scalar(checkpoint, "config.image_width", static_cast<double>(config_.image_width));
    for (const NamedParam& p : parameters()) {
        CheckpointEntry entry;
        entry.shape = p.tensor.shape();
        const auto values = p.tensor.data();
        entry.values.assign(values.begin(), values.end());
        checkpoint["model." + p.name] = std::move(entry);
    }
}

Detector Detector::from_checkpoint(const Checkpoint& checkpoint) {
    const auto field = [&checkpoint](const std::string& name) {
        const double v = get_scalar(checkpoint, "config." + name);
        return static_cast<std::size_t>(v);
    };
    ModelConfig cfg;
    cfg.d_model = field("d_model");
    cfg.num_encoder_layers = field("num_encoder_layers");
    cfg.num_decoder_layers = field("num_decoder_layers");
    cfg.num_heads = field("num_heads");
    cfg.num_queries = field("num_queries");
    cfg.num_classes = field("num_classes");
    cfg.ffn_hidden = field("ffn_hidden");
    cfg.patch_size = field("patch_size");
    cfg.image_height = field("image_height");
    cfg.image_width = field("image_width");

    Detector model(cfg, 0);
    for (const NamedParam& p : model.parameters()) {
        const auto it = checkpoint.find("model." + p.name);
        if (it == checkpoint.end()) {
            throw DataError("checkpoint: missing weight entry model." + p.name);
        }
        if (it->second.shape != p.tensor.shape()) {
            throw DataError("checkpoint: entry model." + p.name + " has shape " +
                            shape_to_string(it->second.shape) + " but the model needs " +
                            shape_to_string(p.tensor.shape()));
        }
        Tensor alias = p.tensor;  // shares the parameter's storage
        auto dst = alias.data();
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] = it->second.values[i];
        }
    }
    return model;
}

}  // namespace tinydetr
