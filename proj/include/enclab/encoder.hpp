#pragma once

// Bidirectional encoder with gated long-convolution sequence mixing and
// Monarch dimension mixing.
//
// Per layer, with X the [S×d] hidden states and pads re-zeroed on entry:
//
//     U = X·W_u                G = sigmoid(X·W_g)
//     C = conv_S(U, K) + depthwise_w(U)          (circular over S)
//     X = LN(X + (G ⊙ C)·W_o)
//     X = LN(X + M2·gelu(M1·x_i))  per position  (Monarch pair)
//
// Sequences are always right-padded to exactly S; wraparound through the
// pad region contributes nothing because pad states are zeroed.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "enclab/autodiff.hpp"
#include "enclab/errors.hpp"
#include "enclab/monarch.hpp"
#include "enclab/rng.hpp"
#include "enclab/tokenizer.hpp"

namespace enclab {

struct EncoderConfig {
    int vocab_size = tok::VOCAB_SIZE;
    int d_model = 64;
    int n_layers = 2;
    int max_seq_len = 2048;
    int short_conv_width = 3;
    int monarch_b = 8;  // monarch_b² == d_model
    double mlm_mask_prob = 0.3;
    int pad_id = tok::PAD;
    std::uint64_t seed = 0;

    void validate() const {
        if (vocab_size <= 0) throw ConfigError("config: vocab_size must be positive");
        if (n_layers <= 0) throw ConfigError("config: n_layers must be positive");
        if (max_seq_len < 16 || !is_power_of_two(static_cast<std::size_t>(max_seq_len)))
            throw ConfigError("config: max_seq_len must be a power of two >= 16, got " +
                              std::to_string(max_seq_len));
        if (monarch_b <= 0 || monarch_b * monarch_b != d_model)
            throw ConfigError("config: monarch_b^2 must equal d_model (" +
                              std::to_string(monarch_b) + "^2 != " + std::to_string(d_model) + ")");
        if (short_conv_width <= 0 || short_conv_width > max_seq_len)
            throw ConfigError("config: bad short_conv_width");
        if (mlm_mask_prob <= 0.0 || mlm_mask_prob >= 1.0)
            throw ConfigError("config: mlm_mask_prob must lie in (0,1)");
        if (pad_id < 0 || pad_id >= vocab_size)
            throw ConfigError("config: pad_id outside vocabulary");
    }
};

struct PositionalTable {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;  // row-major rows×cols
};

// Row i of the output is row (i mod S) of the input: periodic tiling.
inline PositionalTable extend_positions(const PositionalTable& table, int new_rows) {
    if (table.rows <= 0 || table.cols <= 0)
        throw DimensionError("extend_positions: empty table");
    if (new_rows % table.rows != 0)
        throw ConfigError("extend_positions: new length " + std::to_string(new_rows) +
                          " is not a multiple of " + std::to_string(table.rows));
    PositionalTable out;
    out.rows = new_rows;
    out.cols = table.cols;
    out.values.resize(static_cast<std::size_t>(new_rows) * table.cols);
    for (int i = 0; i < new_rows; ++i) {
        const int src = i % table.rows;
        std::copy_n(table.values.data() + static_cast<std::size_t>(src) * table.cols, table.cols,
                    out.values.data() + static_cast<std::size_t>(i) * table.cols);
    }
    return out;
}

class EncoderModel {
public:
    struct Layer {
        DiffArray w_gate, w_value, w_out;  // [d,d]
        DiffArray long_kernel;             // [S,d], one kernel column per channel
        DiffArray short_kernel;            // [d,width]
        MonarchMatrix mix_in, mix_out;
        DiffArray ln_seq_gamma, ln_seq_beta;
        DiffArray ln_dim_gamma, ln_dim_beta;
    };

    explicit EncoderModel(EncoderConfig cfg) : cfg_(cfg), graph_(std::make_unique<Graph>()) {
        cfg_.validate();
        Graph& g = *graph_;
        const int V = cfg_.vocab_size, d = cfg_.d_model, S = cfg_.max_seq_len;
        const int w = cfg_.short_conv_width, b = cfg_.monarch_b;

        Rng rng(Rng::derive_seed(cfg_.seed, 0x6d6f64656cULL));
        auto fill_uniform = [&](DiffArray a, double s) {
            for (auto& v : a.values()) v = rng.uniform(-s, s);
        };

        tok_emb_ = g.leaf({V, d});
        fill_uniform(tok_emb_, 0.1);
        pos_ = g.leaf({S, d});
        fill_uniform(pos_, 0.1);

        const double dense_scale = 1.0 / std::sqrt(static_cast<double>(d));
        layers_.reserve(cfg_.n_layers);
        for (int l = 0; l < cfg_.n_layers; ++l) {
            Layer layer;
            layer.w_gate = g.leaf({d, d});
            layer.w_value = g.leaf({d, d});
            layer.w_out = g.leaf({d, d});
            fill_uniform(layer.w_gate, dense_scale);
            fill_uniform(layer.w_value, dense_scale);
            fill_uniform(layer.w_out, dense_scale);

            // Near-delta kernel: identity pass-through plus trainable noise.
            layer.long_kernel = g.leaf({S, d});
            fill_uniform(layer.long_kernel, 1.0 / S);
            for (int c = 0; c < d; ++c) layer.long_kernel.values()[c] = 1.0;

            layer.short_kernel = g.leaf({d, w});
            fill_uniform(layer.short_kernel, 0.2);

            layer.mix_in = monarch_init(g, b, monarch_default_scale(b), rng);
            layer.mix_out = monarch_init(g, b, monarch_default_scale(b), rng);

            layer.ln_seq_gamma = g.leaf({d});
            layer.ln_seq_beta = g.leaf({d});
            layer.ln_dim_gamma = g.leaf({d});
            layer.ln_dim_beta = g.leaf({d});
            std::fill(layer.ln_seq_gamma.values().begin(), layer.ln_seq_gamma.values().end(), 1.0);
            std::fill(layer.ln_dim_gamma.values().begin(), layer.ln_dim_gamma.values().end(), 1.0);
            layers_.push_back(layer);
        }

        mlm_w_ = g.leaf({d, V});
        fill_uniform(mlm_w_, dense_scale);
        mlm_b_ = g.leaf({V});

        g.freeze_leaves();
    }

    EncoderModel(const EncoderModel&) = delete;
    EncoderModel& operator=(const EncoderModel&) = delete;
    EncoderModel(EncoderModel&&) = default;
    EncoderModel& operator=(EncoderModel&&) = default;

    const EncoderConfig& config() const { return cfg_; }
    Graph& graph() { return *graph_; }

    // Right-pads to S and returns the pad mask alongside the padded ids.
    std::pair<std::vector<int>, std::vector<double>> pad_to_s(const std::vector<int>& ids) const {
        const int S = cfg_.max_seq_len;
        if (static_cast<int>(ids.size()) > S)
            throw DimensionError("encode: sequence of " + std::to_string(ids.size()) +
                                 " tokens exceeds max_seq_len " + std::to_string(S));
        for (int id : ids)
            if (id < 0 || id >= cfg_.vocab_size)
                throw ValueError("encode: token id " + std::to_string(id) +
                                 " outside vocabulary of " + std::to_string(cfg_.vocab_size));
        std::vector<int> padded(ids);
        padded.resize(S, cfg_.pad_id);
        std::vector<double> mask(S, 0.0);
        for (std::size_t i = 0; i < ids.size(); ++i) mask[i] = (ids[i] == cfg_.pad_id) ? 0.0 : 1.0;
        return {std::move(padded), std::move(mask)};
    }

    // Full differentiable forward pass; returns [S×d] final states.
    DiffArray encode(const std::vector<int>& ids, const std::vector<double>& mask) {
        Graph& g = *graph_;
        const int S = cfg_.max_seq_len;
        if (static_cast<int>(ids.size()) != S || static_cast<int>(mask.size()) != S)
            throw DimensionError("encode: expects ids and mask already padded to S");
        DiffArray x = add(lookup_rows(tok_emb_, ids), pos_);
        for (auto& layer : layers_) {
            x = row_mask(x, mask);  // pads carry exactly zero state at layer input
            DiffArray u = matmul(x, layer.w_value);
            DiffArray gate = sigmoid(matmul(x, layer.w_gate));
            DiffArray conv = add(circular_conv_cols(u, layer.long_kernel),
                                 short_conv_cols(u, layer.short_kernel));
            DiffArray y = matmul(mul(gate, conv), layer.w_out);
            x = layer_norm(add(x, y), layer.ln_seq_gamma, layer.ln_seq_beta);
            DiffArray z = monarch_apply_rows(layer.mix_out,
                                             gelu(monarch_apply_rows(layer.mix_in, x)));
            x = layer_norm(add(x, z), layer.ln_dim_gamma, layer.ln_dim_beta);
        }
        return x;
    }

    DiffArray encode(const std::vector<int>& ids) {
        auto [padded, mask] = pad_to_s(ids);
        return encode(padded, mask);
    }

    // Pooled unit embedding of a token sequence (differentiable).
    DiffArray embed_tokens(const std::vector<int>& ids) {
        auto [padded, mask] = pad_to_s(ids);
        bool any = false;
        for (double m : mask) any = any || (m != 0.0);
        if (!any) throw ValueError("embed: no non-pad tokens");
        DiffArray states = encode(padded, mask);
        return l2_normalize(mean_rows(states, mask));
    }

    // Tokenize, truncate to S, encode, mean-pool, normalize.  Forward only;
    // the tape is left as it was found.
    std::vector<double> embed_text(std::string_view text) {
        if (text.empty()) throw ValueError("embed_text: empty text");
        auto ids = tok::encode(text, cfg_.max_seq_len);
        Graph& g = *graph_;
        const bool was_recording = g.recording();
        g.set_recording(false);
        std::vector<double> result;
        try {
            result = embed_tokens(ids).values();
        } catch (...) {
            g.set_recording(was_recording);
            g.reset();
            throw;
        }
        g.set_recording(was_recording);
        g.reset();
        return result;
    }

    // Per-position vocabulary logits from encoded states.
    DiffArray mlm_logits(DiffArray states) {
        return add_rowvec(matmul(states, mlm_w_), mlm_b_);
    }

    long count_params() const {
        long total = 0;
        for (const auto& [name, arr] : named_params_const_()) total += static_cast<long>(arr.size());
        return total;
    }

    std::vector<std::pair<std::string, DiffArray>> named_params() {
        return named_params_const_();
    }

    std::vector<DiffArray> params() {
        std::vector<DiffArray> out;
        for (auto& [name, arr] : named_params_const_()) out.push_back(arr);
        return out;
    }

    // Positional table as a value type (for the extension op).
    PositionalTable positional_table() const {
        return {cfg_.max_seq_len, cfg_.d_model, pos_.values()};
    }

    // Copy parameters from a shorter-context model: positional rows are
    // tiled periodically, long-conv kernels are zero-extended (taps past
    // the source length stay zero so local mixing is preserved), and all
    // shape-stable arrays are copied as-is.
    void warm_start_from(EncoderModel& src) {
        const EncoderConfig& other = src.config();
        if (other.d_model != cfg_.d_model || other.n_layers != cfg_.n_layers ||
            other.vocab_size != cfg_.vocab_size || other.monarch_b != cfg_.monarch_b ||
            other.short_conv_width != cfg_.short_conv_width)
            throw ConfigError(
                "warm start: source and target differ in d_model/n_layers/vocab/monarch_b "
                "(source d_model " + std::to_string(other.d_model) + ", target " +
                std::to_string(cfg_.d_model) + ")");
        if (cfg_.max_seq_len % other.max_seq_len != 0)
            throw ConfigError("warm start: target max_seq_len must be a multiple of source");

        auto mine = named_params();
        auto theirs = src.named_params();
        for (std::size_t i = 0; i < mine.size(); ++i) {
            auto& [name, dst] = mine[i];
            auto& [src_name, s] = theirs[i];
            if (name != src_name) throw DataError("warm start: parameter order mismatch");
            if (name == "pos") {
                PositionalTable extended =
                    extend_positions(src.positional_table(), cfg_.max_seq_len);
                dst.values() = std::move(extended.values);
            } else if (name.ends_with("long_kernel")) {
                auto& dv = dst.values();
                std::fill(dv.begin(), dv.end(), 0.0);
                std::copy(s.values().begin(), s.values().end(), dv.begin());
            } else {
                if (dst.size() != s.size()) throw DataError("warm start: size mismatch for " + name);
                dst.values() = s.values();
            }
        }
    }

private:
    std::vector<std::pair<std::string, DiffArray>> named_params_const_() const {
        std::vector<std::pair<std::string, DiffArray>> out;
        out.emplace_back("tok_emb", tok_emb_);
        out.emplace_back("pos", pos_);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            out.emplace_back(p + "w_gate", layer.w_gate);
            out.emplace_back(p + "w_value", layer.w_value);
            out.emplace_back(p + "w_out", layer.w_out);
            out.emplace_back(p + "long_kernel", layer.long_kernel);
            out.emplace_back(p + "short_kernel", layer.short_kernel);
            out.emplace_back(p + "mix_in.left", layer.mix_in.left);
            out.emplace_back(p + "mix_in.right", layer.mix_in.right);
            out.emplace_back(p + "mix_out.left", layer.mix_out.left);
            out.emplace_back(p + "mix_out.right", layer.mix_out.right);
            out.emplace_back(p + "ln_seq.gamma", layer.ln_seq_gamma);
            out.emplace_back(p + "ln_seq.beta", layer.ln_seq_beta);
            out.emplace_back(p + "ln_dim.gamma", layer.ln_dim_gamma);
            out.emplace_back(p + "ln_dim.beta", layer.ln_dim_beta);
        }
        out.emplace_back("mlm_head.w", mlm_w_);
        out.emplace_back("mlm_head.b", mlm_b_);
        return out;
    }

    EncoderConfig cfg_;
    std::unique_ptr<Graph> graph_;
    DiffArray tok_emb_, pos_;
    std::vector<Layer> layers_;
    DiffArray mlm_w_, mlm_b_;
};

}  // namespace enclab
