#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "orthoscore/rng.hpp"
#include "orthoscore/tensor.hpp"

namespace orthoscore {

struct ModelConfig {
    int64_t block_size = 63;
    int64_t n_layer = 4;
    int64_t n_head = 4;
    int64_t n_embd = 336;
    int64_t vocab_size = 0;
    double dropout_rate = 0.1;
    double init_std = 0.02;
    uint64_t seed = 0;

    int64_t head_dim() const { return n_embd / n_head; }

    void validate() const {
        if (block_size < 1 || n_layer < 0 || n_head < 1 || n_embd < 1 || vocab_size < 1) {
            fail(ErrorKind::Config, "model config: block_size/n_head/n_embd/vocab_size must be "
                                    "positive and n_layer non-negative");
        }
        if (n_embd % n_head != 0) {
            fail(ErrorKind::Config, "model config: n_embd " + std::to_string(n_embd) +
                                        " not divisible by n_head " + std::to_string(n_head));
        }
        if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
            fail(ErrorKind::Config, "model config: dropout_rate must be in [0, 1)");
        }
        if (init_std <= 0.0) {
            fail(ErrorKind::Config, "model config: init_std must be positive");
        }
    }

    static ModelConfig paper_preset() {
        ModelConfig c;
        c.block_size = 63;
        c.n_layer = 4;
        c.n_head = 4;
        c.n_embd = 336;
        c.dropout_rate = 0.1;
        return c;
    }

    // CPU-trainable preset that keeps the block layout of the full model.
    static ModelConfig desk_preset() {
        ModelConfig c;
        c.block_size = 63;
        c.n_layer = 2;
        c.n_head = 2;
        c.n_embd = 128;
        c.dropout_rate = 0.0;
        return c;
    }
};

// Closed-form trainable parameter total:
//   vocab*d + block*d + L*(12d^2 + 13d) + 2d + d*vocab
// per layer: qkv 3d^2+3d, attention projection d^2+d, MLP 8d^2+5d, two
// layer-norms 4d; plus final layer-norm 2d and a bias-free output head.
inline int64_t count_params(const ModelConfig& config) {
    config.validate();
    const int64_t d = config.n_embd;
    const int64_t per_layer = 12 * d * d + 13 * d;
    return config.vocab_size * d + config.block_size * d + config.n_layer * per_layer + 2 * d +
           d * config.vocab_size;
}

template <class T>
struct BlockParamsT {
    TensorT<T> ln1_gamma, ln1_beta;
    TensorT<T> qkv_weight, qkv_bias;   // d -> 3d, fused q/k/v
    TensorT<T> proj_weight, proj_bias; // d -> d
    TensorT<T> ln2_gamma, ln2_beta;
    TensorT<T> fc_weight, fc_bias;     // d -> 4d
    TensorT<T> out_weight, out_bias;   // 4d -> d
};

// Decoder-only character transformer with causal self-attention.
template <class T>
class ModelT {
public:
    explicit ModelT(const ModelConfig& config) : config_(config) {
        config.validate();
        Rng rng(config.seed);
        const int64_t d = config.n_embd;
        tok_embedding_ = normal_init(rng, {config.vocab_size, d});
        pos_embedding_ = normal_init(rng, {config.block_size, d});
        blocks_.reserve(static_cast<size_t>(config.n_layer));
        for (int64_t l = 0; l < config.n_layer; ++l) {
            BlockParamsT<T> b;
            b.ln1_gamma = ones({d});
            b.ln1_beta = param_zeros({d});
            b.qkv_weight = normal_init(rng, {d, 3 * d});
            b.qkv_bias = param_zeros({3 * d});
            b.proj_weight = normal_init(rng, {d, d});
            b.proj_bias = param_zeros({d});
            b.ln2_gamma = ones({d});
            b.ln2_beta = param_zeros({d});
            b.fc_weight = normal_init(rng, {d, 4 * d});
            b.fc_bias = param_zeros({4 * d});
            b.out_weight = normal_init(rng, {4 * d, d});
            b.out_bias = param_zeros({d});
            blocks_.push_back(std::move(b));
        }
        final_gamma_ = ones({d});
        final_beta_ = param_zeros({d});
        head_weight_ = normal_init(rng, {d, config.vocab_size});
    }

    const ModelConfig& config() const { return config_; }

    // Logits [T x vocab]; position t depends only on tokens 0..t. Dropout is
    // applied only in train mode (rng required then, unless the rate is 0).
    TensorT<T> forward(TapeT<T>* tape, std::span<const int32_t> tokens, bool train_mode = false,
                       Rng* dropout_rng = nullptr) const {
        const int64_t t = static_cast<int64_t>(tokens.size());
        if (t < 1 || t > config_.block_size) {
            fail(ErrorKind::Length, "forward: sequence length " + std::to_string(t) +
                                        " outside [1, " + std::to_string(config_.block_size) + "]");
        }
        const bool drop = train_mode && config_.dropout_rate > 0.0;
        if (drop && dropout_rng == nullptr) {
            fail(ErrorKind::Usage, "forward: train mode with dropout requires an rng");
        }
        const double att_scale = 1.0 / std::sqrt(static_cast<double>(config_.head_dim()));
        const int64_t d = config_.n_embd;
        const int64_t hd = config_.head_dim();

        auto x = ops::add(tape, ops::embedding(tape, tok_embedding_, {tokens.begin(), tokens.end()}),
                          ops::slice_rows(tape, pos_embedding_, 0, t));
        if (drop) {
            x = ops::dropout(tape, x, config_.dropout_rate, *dropout_rng);
        }
        for (const auto& b : blocks_) {
            auto h = ops::layer_norm(tape, x, b.ln1_gamma, b.ln1_beta, kLayerNormEps);
            auto qkv = ops::add_row(tape, ops::matmul(tape, h, b.qkv_weight), b.qkv_bias);
            std::vector<TensorT<T>> heads;
            heads.reserve(static_cast<size_t>(config_.n_head));
            for (int64_t i = 0; i < config_.n_head; ++i) {
                auto q = ops::slice_cols(tape, qkv, i * hd, (i + 1) * hd);
                auto k = ops::slice_cols(tape, qkv, d + i * hd, d + (i + 1) * hd);
                auto v = ops::slice_cols(tape, qkv, 2 * d + i * hd, 2 * d + (i + 1) * hd);
                if (drop) {
                    // dropout applies to the attention probabilities, so the
                    // composed form is used when it is active
                    auto att = ops::causal_softmax_rows(
                        tape,
                        ops::scale(tape, ops::matmul(tape, q, ops::transpose(tape, k)), att_scale));
                    att = ops::dropout(tape, att, config_.dropout_rate, *dropout_rng);
                    heads.push_back(ops::matmul(tape, att, v));
                } else {
                    heads.push_back(ops::causal_attention(tape, q, k, v, att_scale));
                }
            }
            auto merged = config_.n_head == 1 ? heads[0] : ops::concat_cols(tape, heads);
            auto attn_out = ops::add_row(tape, ops::matmul(tape, merged, b.proj_weight), b.proj_bias);
            if (drop) {
                attn_out = ops::dropout(tape, attn_out, config_.dropout_rate, *dropout_rng);
            }
            x = ops::add(tape, x, attn_out);

            auto h2 = ops::layer_norm(tape, x, b.ln2_gamma, b.ln2_beta, kLayerNormEps);
            auto mlp = ops::add_row(tape, ops::matmul(tape, h2, b.fc_weight), b.fc_bias);
            mlp = ops::gelu(tape, mlp);
            mlp = ops::add_row(tape, ops::matmul(tape, mlp, b.out_weight), b.out_bias);
            if (drop) {
                mlp = ops::dropout(tape, mlp, config_.dropout_rate, *dropout_rng);
            }
            x = ops::add(tape, x, mlp);
        }
        x = ops::layer_norm(tape, x, final_gamma_, final_beta_, kLayerNormEps);
        return ops::matmul(tape, x, head_weight_);
    }

    // Parameters in a stable order; this order defines the checkpoint
    // manifest and the Adam state layout.
    std::vector<std::pair<std::string, TensorT<T>>> named_params() const {
        std::vector<std::pair<std::string, TensorT<T>>> out;
        out.emplace_back("tok_embedding", tok_embedding_);
        out.emplace_back("pos_embedding", pos_embedding_);
        for (size_t l = 0; l < blocks_.size(); ++l) {
            const auto& b = blocks_[l];
            const std::string p = "block" + std::to_string(l) + ".";
            out.emplace_back(p + "ln1_gamma", b.ln1_gamma);
            out.emplace_back(p + "ln1_beta", b.ln1_beta);
            out.emplace_back(p + "qkv_weight", b.qkv_weight);
            out.emplace_back(p + "qkv_bias", b.qkv_bias);
            out.emplace_back(p + "proj_weight", b.proj_weight);
            out.emplace_back(p + "proj_bias", b.proj_bias);
            out.emplace_back(p + "ln2_gamma", b.ln2_gamma);
            out.emplace_back(p + "ln2_beta", b.ln2_beta);
            out.emplace_back(p + "fc_weight", b.fc_weight);
            out.emplace_back(p + "fc_bias", b.fc_bias);
            out.emplace_back(p + "out_weight", b.out_weight);
            out.emplace_back(p + "out_bias", b.out_bias);
        }
        out.emplace_back("final_gamma", final_gamma_);
        out.emplace_back("final_beta", final_beta_);
        out.emplace_back("head_weight", head_weight_);
        return out;
    }

    std::vector<TensorT<T>> params() const {
        std::vector<TensorT<T>> out;
        for (auto& [name, t] : named_params()) {
            out.push_back(t);
        }
        return out;
    }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& t : params()) {
            n += t.numel();
        }
        return n;
    }

    void zero_grad() {
        for (auto& t : params()) {
            t.zero_grad();
        }
    }

    // A model whose parameters share this model's values but carry their own
    // gradient buffers; used for parallel gradient accumulation.
    ModelT shared_data_view() const {
        ModelT view(*this);
        view.tok_embedding_ = tok_embedding_.grad_view();
        view.pos_embedding_ = pos_embedding_.grad_view();
        for (size_t l = 0; l < blocks_.size(); ++l) {
            auto& b = view.blocks_[l];
            const auto& s = blocks_[l];
            b.ln1_gamma = s.ln1_gamma.grad_view();
            b.ln1_beta = s.ln1_beta.grad_view();
            b.qkv_weight = s.qkv_weight.grad_view();
            b.qkv_bias = s.qkv_bias.grad_view();
            b.proj_weight = s.proj_weight.grad_view();
            b.proj_bias = s.proj_bias.grad_view();
            b.ln2_gamma = s.ln2_gamma.grad_view();
            b.ln2_beta = s.ln2_beta.grad_view();
            b.fc_weight = s.fc_weight.grad_view();
            b.fc_bias = s.fc_bias.grad_view();
            b.out_weight = s.out_weight.grad_view();
            b.out_bias = s.out_bias.grad_view();
        }
        view.final_gamma_ = final_gamma_.grad_view();
        view.final_beta_ = final_beta_.grad_view();
        view.head_weight_ = head_weight_.grad_view();
        return view;
    }

    static constexpr double kLayerNormEps = 1e-5;

    // Read access to the parameter tensors for code that assembles its own
    // computation (the trainer's packed-batch forward).
    const TensorT<T>& tok_embedding() const { return tok_embedding_; }
    const TensorT<T>& pos_embedding() const { return pos_embedding_; }
    const std::vector<BlockParamsT<T>>& blocks() const { return blocks_; }
    const TensorT<T>& final_gamma() const { return final_gamma_; }
    const TensorT<T>& final_beta() const { return final_beta_; }
    const TensorT<T>& head_weight() const { return head_weight_; }

private:
    TensorT<T> normal_init(Rng& rng, Shape shape) {
        auto t = TensorT<T>::zeros(std::move(shape), true);
        for (auto& v : t.data()) {
            v = static_cast<T>(rng.normal() * config_.init_std);
        }
        return t;
    }

    TensorT<T> ones(Shape shape) {
        auto t = TensorT<T>::zeros(std::move(shape), true);
        std::fill(t.data().begin(), t.data().end(), T(1));
        return t;
    }

    TensorT<T> param_zeros(Shape shape) { return TensorT<T>::zeros(std::move(shape), true); }

    ModelConfig config_;
    TensorT<T> tok_embedding_;
    TensorT<T> pos_embedding_;
    std::vector<BlockParamsT<T>> blocks_;
    TensorT<T> final_gamma_, final_beta_;
    TensorT<T> head_weight_;
};

using Model = ModelT<float>;

} // namespace orthoscore
