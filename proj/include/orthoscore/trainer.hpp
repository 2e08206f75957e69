#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "orthoscore/adam.hpp"
#include "orthoscore/codec.hpp"
#include "orthoscore/model.hpp"

namespace orthoscore {

enum class Precision { f32, f64 };

struct TrainConfig {
    int64_t batch_size = 256;
    int64_t max_steps = 24000;
    double learning_rate = 5e-4;
    int64_t warmup_steps = 200;
    double final_lr_fraction = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double epsilon = 1e-8;
    std::optional<double> grad_clip = 1.0;
    uint64_t seed = 0;
    int64_t eval_interval = 1000;
    Precision precision = Precision::f32;

    void validate() const {
        if (batch_size < 1 || max_steps < 0 || eval_interval < 1) {
            fail(ErrorKind::Config, "train config: batch_size/eval_interval must be positive");
        }
        if (learning_rate <= 0 || epsilon <= 0) {
            fail(ErrorKind::Config, "train config: learning_rate and epsilon must be positive");
        }
        if (warmup_steps >= max_steps && max_steps > 0) {
            fail(ErrorKind::Config, "train config: warmup_steps must be below max_steps");
        }
        if (grad_clip && *grad_clip <= 0) {
            fail(ErrorKind::Config, "train config: grad_clip must be positive when set");
        }
    }

    static TrainConfig desk_preset() {
        TrainConfig c;
        c.batch_size = 64;
        c.max_steps = 6000;
        return c;
    }

    static TrainConfig paper_preset() { return {}; }
};

// Linear warmup to learning_rate over warmup_steps, then cosine decay to
// final_lr_fraction * learning_rate at max_steps.
inline double lr_at(int64_t step, const TrainConfig& cfg) {
    if (step < 0 || step > cfg.max_steps) {
        fail(ErrorKind::Usage, "lr_at: step outside [0, max_steps]");
    }
    if (step < cfg.warmup_steps) {
        return cfg.learning_rate * static_cast<double>(step) /
               static_cast<double>(cfg.warmup_steps);
    }
    const double floor = cfg.final_lr_fraction * cfg.learning_rate;
    if (cfg.max_steps == cfg.warmup_steps) {
        return cfg.learning_rate;
    }
    const double progress = static_cast<double>(step - cfg.warmup_steps) /
                            static_cast<double>(cfg.max_steps - cfg.warmup_steps);
    return floor + (cfg.learning_rate - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct LossTrace {
    std::vector<std::pair<int64_t, double>> entries; // (step, training loss)
    double wall_seconds = 0.0;
};

// Invoked at every eval_interval boundary and once at completion.
template <class T>
using CheckpointSink = std::function<void(int64_t step, const ModelT<T>& model)>;

namespace detail_train {

// Deterministic permutation stream: each epoch visits every block exactly
// once before reshuffling, independent of batch size.
class IndexStream {
public:
    IndexStream(int64_t n, uint64_t seed) : n_(n), rng_(seed) {
        order_.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            order_[static_cast<size_t>(i)] = i;
        }
        reshuffle();
    }

    int64_t next() {
        if (cursor_ == order_.size()) {
            reshuffle();
        }
        return order_[cursor_++];
    }

private:
    void reshuffle() {
        rng_.shuffle(order_);
        cursor_ = 0;
    }

    int64_t n_;
    Rng rng_;
    std::vector<int64_t> order_;
    size_t cursor_ = 0;
};

// Tokens run to the end marker; everything after is PAD with ignored targets,
// which contributes nothing to loss or gradients, so the forward pass stops
// at the last position whose prediction is scored.
inline int64_t effective_length(const TrainingBlock& block) {
    int64_t last_active = -1;
    for (int64_t i = 0; i < static_cast<int64_t>(block.y.size()); ++i) {
        if (block.y[static_cast<size_t>(i)] != kIgnoreTarget) {
            last_active = i;
        }
    }
    return last_active + 1;
}

// Forward over several sequences packed row-wise into one tape. Position-wise
// work (embeddings, layer norms, projections, the MLP, the head and the loss)
// runs on the [sum(T_i) x d] concatenation; attention is evaluated per
// sequence on row slices, so no position ever attends across a sequence
// boundary. Returns the masked cross-entropy over the pack, scaled by
// `loss_scale`.
template <class T>
TensorT<T> packed_loss(TapeT<T>& tape, const ModelT<T>& model,
                       const std::vector<const TrainingBlock*>& seqs,
                       const std::vector<int64_t>& lens, double loss_scale, Rng* drop_rng) {
    const auto& cfg = model.config();
    const int64_t d = cfg.n_embd;
    const int64_t hd = cfg.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const bool drop = drop_rng != nullptr && cfg.dropout_rate > 0.0;
    TapeT<T>* tp = &tape;

    std::vector<int32_t> tokens;
    std::vector<int32_t> positions;
    std::vector<int32_t> targets;
    std::vector<int64_t> offsets(seqs.size() + 1, 0);
    for (size_t s = 0; s < seqs.size(); ++s) {
        const int64_t len = lens[s];
        tokens.insert(tokens.end(), seqs[s]->x.begin(), seqs[s]->x.begin() + len);
        targets.insert(targets.end(), seqs[s]->y.begin(), seqs[s]->y.begin() + len);
        for (int64_t p = 0; p < len; ++p) {
            positions.push_back(static_cast<int32_t>(p));
        }
        offsets[s + 1] = offsets[s] + len;
    }

    auto x = ops::add(tp, ops::embedding(tp, model.tok_embedding(), std::move(tokens)),
                      ops::embedding(tp, model.pos_embedding(), std::move(positions)));
    if (drop) {
        x = ops::dropout(tp, x, cfg.dropout_rate, *drop_rng);
    }
    for (const auto& b : model.blocks()) {
        auto h = ops::layer_norm(tp, x, b.ln1_gamma, b.ln1_beta, ModelT<T>::kLayerNormEps);
        auto qkv = ops::add_row(tp, ops::matmul(tp, h, b.qkv_weight), b.qkv_bias);
        std::vector<TensorT<T>> head_outputs;
        head_outputs.reserve(static_cast<size_t>(cfg.n_head));
        for (int64_t i = 0; i < cfg.n_head; ++i) {
            auto q = ops::slice_cols(tp, qkv, i * hd, (i + 1) * hd);
            auto k = ops::slice_cols(tp, qkv, d + i * hd, d + (i + 1) * hd);
            auto v = ops::slice_cols(tp, qkv, 2 * d + i * hd, 2 * d + (i + 1) * hd);
            std::vector<TensorT<T>> per_seq;
            per_seq.reserve(seqs.size());
            for (size_t s = 0; s < seqs.size(); ++s) {
                auto qs = seqs.size() == 1 ? q : ops::slice_rows(tp, q, offsets[s], offsets[s + 1]);
                auto ks = seqs.size() == 1 ? k : ops::slice_rows(tp, k, offsets[s], offsets[s + 1]);
                auto vs = seqs.size() == 1 ? v : ops::slice_rows(tp, v, offsets[s], offsets[s + 1]);
                if (drop) {
                    auto att = ops::causal_softmax_rows(
                        tp, ops::scale(tp, ops::matmul(tp, qs, ops::transpose(tp, ks)), att_scale));
                    att = ops::dropout(tp, att, cfg.dropout_rate, *drop_rng);
                    per_seq.push_back(ops::matmul(tp, att, vs));
                } else {
                    per_seq.push_back(ops::causal_attention(tp, qs, ks, vs, att_scale));
                }
            }
            head_outputs.push_back(per_seq.size() == 1 ? per_seq[0]
                                                       : ops::concat_rows(tp, per_seq));
        }
        auto merged = cfg.n_head == 1 ? head_outputs[0] : ops::concat_cols(tp, head_outputs);
        auto attn_out = ops::add_row(tp, ops::matmul(tp, merged, b.proj_weight), b.proj_bias);
        if (drop) {
            attn_out = ops::dropout(tp, attn_out, cfg.dropout_rate, *drop_rng);
        }
        x = ops::add(tp, x, attn_out);

        auto h2 = ops::layer_norm(tp, x, b.ln2_gamma, b.ln2_beta, ModelT<T>::kLayerNormEps);
        auto mlp = ops::add_row(tp, ops::matmul(tp, h2, b.fc_weight), b.fc_bias);
        mlp = ops::gelu(tp, mlp);
        mlp = ops::add_row(tp, ops::matmul(tp, mlp, b.out_weight), b.out_bias);
        if (drop) {
            mlp = ops::dropout(tp, mlp, cfg.dropout_rate, *drop_rng);
        }
        x = ops::add(tp, x, mlp);
    }
    x = ops::layer_norm(tp, x, model.final_gamma(), model.final_beta(), ModelT<T>::kLayerNormEps);
    auto logits = ops::matmul(tp, x, model.head_weight());
    auto loss = ops::softmax_cross_entropy(tp, logits, std::move(targets));
    return ops::scale(tp, loss, loss_scale);
}

} // namespace detail_train

// Runs max_steps Adam updates over shuffled mini-batches with prompt-masked
// next-character loss. The model is updated in place; the returned trace has
// one entry per step. Deterministic under (dataset, config, seed) within one
// build, regardless of worker thread count.
template <class T>
LossTrace train(ModelT<T>& model, std::span<const Sample> samples, const Vocab& vocab,
                const TrainConfig& cfg, CheckpointSink<T> sink = {}) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();
    LossTrace trace;
    if (cfg.max_steps == 0) {
        return trace;
    }
    if (samples.empty()) {
        fail(ErrorKind::Validation, "train: empty training set");
    }
    if (cfg.batch_size > static_cast<int64_t>(samples.size())) {
        fail(ErrorKind::Validation, "train: batch size " + std::to_string(cfg.batch_size) +
                                        " exceeds dataset size " +
                                        std::to_string(samples.size()));
    }

    const int64_t block_size = model.config().block_size;
    std::vector<TrainingBlock> blocks;
    blocks.reserve(samples.size());
    std::vector<int64_t> lengths;
    lengths.reserve(samples.size());
    for (const auto& s : samples) {
        blocks.push_back(to_training_block(s, vocab, block_size));
        lengths.push_back(detail_train::effective_length(blocks.back()));
    }

    auto params = model.params();
    AdamStateT<T> adam(model.param_count(),
                       {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon});

    // Gradients accumulate into a fixed number of chunk views and are reduced
    // in chunk order, so results do not depend on how many workers run.
    const int64_t n_chunks = std::min<int64_t>(cfg.batch_size, 8);
    std::vector<ModelT<T>> views;
    std::vector<std::vector<TensorT<T>>> view_params;
    for (int64_t c = 0; c < n_chunks; ++c) {
        views.push_back(model.shared_data_view());
        view_params.push_back(views.back().params());
    }
    const unsigned workers =
        std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                        static_cast<unsigned>(n_chunks)));

    detail_train::IndexStream stream(static_cast<int64_t>(blocks.size()),
                                     mix_seed(cfg.seed, 0xba7c4));
    std::vector<int64_t> batch(static_cast<size_t>(cfg.batch_size));
    std::vector<double> chunk_loss(static_cast<size_t>(n_chunks), 0.0);

    for (int64_t step = 1; step <= cfg.max_steps; ++step) {
        for (auto& idx : batch) {
            idx = stream.next();
        }
        for (auto& v : views) {
            v.zero_grad();
        }
        std::fill(chunk_loss.begin(), chunk_loss.end(), 0.0);

        // Loss is the mean over every loss-active position in the batch;
        // per-chunk means are reweighted by their active counts so the value
        // and gradients do not depend on the chunk layout.
        const bool uses_dropout = model.config().dropout_rate > 0.0;
        std::vector<int64_t> chunk_active(static_cast<size_t>(n_chunks), 0);
        int64_t total_active = 0;
        for (int64_t c = 0; c < n_chunks; ++c) {
            const int64_t lo = c * cfg.batch_size / n_chunks;
            const int64_t hi = (c + 1) * cfg.batch_size / n_chunks;
            int64_t active = 0;
            for (int64_t b = lo; b < hi; ++b) {
                const auto& y = blocks[static_cast<size_t>(batch[static_cast<size_t>(b)])].y;
                for (int32_t target : y) {
                    active += target != kIgnoreTarget;
                }
            }
            chunk_active[static_cast<size_t>(c)] = active;
            total_active += active;
        }
        auto run_chunk = [&](int64_t c) {
            const int64_t lo = c * cfg.batch_size / n_chunks;
            const int64_t hi = (c + 1) * cfg.batch_size / n_chunks;
            std::vector<const TrainingBlock*> seqs;
            std::vector<int64_t> lens;
            for (int64_t b = lo; b < hi; ++b) {
                const int64_t idx = batch[static_cast<size_t>(b)];
                seqs.push_back(&blocks[static_cast<size_t>(idx)]);
                lens.push_back(lengths[static_cast<size_t>(idx)]);
            }
            Rng drop_rng(mix_seed(mix_seed(cfg.seed, static_cast<uint64_t>(step)),
                                  static_cast<uint64_t>(c)));
            TapeT<T> tape;
            auto loss = detail_train::packed_loss(
                tape, views[static_cast<size_t>(c)], seqs, lens,
                static_cast<double>(chunk_active[static_cast<size_t>(c)]) /
                    static_cast<double>(total_active),
                uses_dropout ? &drop_rng : nullptr);
            tape.backward(loss);
            chunk_loss[static_cast<size_t>(c)] = static_cast<double>(loss.item());
        };

        if (workers == 1 || n_chunks == 1) {
            for (int64_t c = 0; c < n_chunks; ++c) {
                run_chunk(c);
            }
        } else {
            std::vector<std::thread> pool;
            std::atomic<int64_t> next_chunk{0};
            for (unsigned w = 0; w < workers; ++w) {
                pool.emplace_back([&]() {
                    for (;;) {
                        const int64_t c = next_chunk.fetch_add(1);
                        if (c >= n_chunks) {
                            return;
                        }
                        run_chunk(c);
                    }
                });
            }
            for (auto& th : pool) {
                th.join();
            }
        }

        // Chunk-order reduction into the master gradients.
        for (size_t p = 0; p < params.size(); ++p) {
            auto dst = params[p].grad();
            for (int64_t c = 0; c < n_chunks; ++c) {
                auto src = view_params[static_cast<size_t>(c)][p].grad();
                for (size_t i = 0; i < dst.size(); ++i) {
                    dst[i] += src[i];
                }
            }
        }

        double loss_value = 0.0;
        for (double v : chunk_loss) {
            loss_value += v;
        }
        if (!std::isfinite(loss_value)) {
            fail(ErrorKind::Divergence,
                 "divergence: non-finite training loss at step " + std::to_string(step));
        }

        std::vector<std::span<T>> grad_spans;
        std::vector<std::span<T>> param_spans;
        std::vector<std::span<const T>> grad_views;
        grad_spans.reserve(params.size());
        for (auto& p : params) {
            param_spans.push_back(p.data());
            grad_spans.push_back(p.grad());
        }
        if (cfg.grad_clip) {
            clip_global_norm<T>(grad_spans, *cfg.grad_clip);
        }
        for (auto g : grad_spans) {
            grad_views.emplace_back(g.data(), g.size());
        }
        adam.hyper.learning_rate = lr_at(step, cfg);
        adam_step<T>(param_spans, grad_views, adam);
        model.zero_grad();

        trace.entries.emplace_back(step, loss_value);
        if (sink && (step % cfg.eval_interval == 0) && step != cfg.max_steps) {
            sink(step, model);
        }
    }
    if (sink) {
        sink(cfg.max_steps, model);
    }
    trace.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return trace;
}

} // namespace orthoscore
