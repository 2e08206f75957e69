#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "orthoscore/codec.hpp"
#include "orthoscore/corpus.hpp"
#include "orthoscore/model.hpp"
#include "orthoscore/trainer.hpp"

namespace orthoscore {

struct PairScore {
    std::string orthography;
    std::string task;
    int64_t correct = 0;
    int64_t total = 0;
    double percentage = 0.0; // 100 * correct / total
};

struct EpisodeReport {
    std::vector<PairScore> scores; // one per orthography-task pair
    uint64_t seed = 0;
    std::string checkpoint_id; // content hash of the trained parameters
};

struct AggregateRow {
    std::string orthography;
    std::string task;
    double mean = 0.0;
    double stddev = 0.0; // sample (n-1) standard deviation
    int64_t episodes = 0;
};

struct AggregateReport {
    std::vector<AggregateRow> rows;
};

// True iff the two character sequences are identical in length and content.
bool exact_match(std::u32string_view predicted, std::u32string_view target);

// Greedy decode: feed "orth,task,input," then append the argmax next token
// (ties to the lowest id) until an end marker, max_len characters, or block
// exhaustion. The returned sequence never includes control tokens.
template <class T>
std::u32string predict(const ModelT<T>& model, const Vocab& vocab, const std::string& orthography,
                       const std::string& task, std::u32string_view input, int64_t max_len = 26) {
    auto tokens = make_prompt(orthography, task, input, vocab);
    const int64_t block_size = model.config().block_size;
    if (static_cast<int64_t>(tokens.size()) + max_len > block_size + 1) {
        fail(ErrorKind::Length, "predict: prompt of " + std::to_string(tokens.size()) +
                                    " tokens cannot fit " + std::to_string(max_len) +
                                    " generated tokens in block " + std::to_string(block_size));
    }
    std::u32string out;
    for (int64_t i = 0; i < max_len; ++i) {
        if (static_cast<int64_t>(tokens.size()) > block_size) {
            break;
        }
        const auto window = std::span<const int32_t>(
            tokens.data(), std::min<size_t>(tokens.size(), static_cast<size_t>(block_size)));
        auto logits = model.forward(nullptr, window, false);
        const int64_t v = model.config().vocab_size;
        auto row = logits.data().subspan(static_cast<size_t>((window.size() - 1) * v),
                                         static_cast<size_t>(v));
        int32_t best = 0;
        for (int64_t j = 1; j < v; ++j) {
            if (row[static_cast<size_t>(j)] > row[static_cast<size_t>(best)]) {
                best = static_cast<int32_t>(j);
            }
        }
        if (best == kEotId || best == kPadId) {
            break;
        }
        out.push_back(vocab.decode_char(best));
        tokens.push_back(best);
    }
    return out;
}

using PredictFn = std::function<std::u32string(const std::string& orthography,
                                               const std::string& task,
                                               const std::u32string& input)>;

// Exact-match percentage over samples sharing one orthography-task pair.
// Generic over the predictor so reference stubs can stand in for a model.
PairScore score_pair(const PredictFn& predictor, std::span<const Sample> samples);

template <class T>
PairScore score_pair(const ModelT<T>& model, const Vocab& vocab, std::span<const Sample> samples) {
    if (samples.empty()) {
        fail(ErrorKind::Validation, "score_pair: empty sample list");
    }
    PairScore score;
    score.orthography = samples[0].orthography;
    score.task = samples[0].task;
    score.total = static_cast<int64_t>(samples.size());
    for (const auto& s : samples) {
        if (s.orthography != score.orthography || s.task != score.task) {
            fail(ErrorKind::Validation, "score_pair: mixed orthography-task pairs");
        }
    }
    // Read-only scoring is embarrassingly parallel; the correct-count
    // reduction is order-independent.
    std::atomic<int64_t> next{0};
    std::atomic<int64_t> correct{0};
    const unsigned workers = std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(),
                                                             static_cast<unsigned>(samples.size())));
    auto worker = [&]() {
        int64_t local = 0;
        for (;;) {
            const int64_t i = next.fetch_add(1);
            if (i >= static_cast<int64_t>(samples.size())) {
                break;
            }
            const auto& s = samples[static_cast<size_t>(i)];
            if (exact_match(predict(model, vocab, s.orthography, s.task, s.input), s.output)) {
                ++local;
            }
        }
        correct.fetch_add(local);
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& th : pool) {
            th.join();
        }
    }
    score.correct = correct.load();
    score.percentage = 100.0 * static_cast<double>(score.correct) /
                       static_cast<double>(score.total);
    return score;
}

// One full protocol episode: regenerate the datasets from the episode seed,
// train a fresh model, score every orthography-task pair.
EpisodeReport run_episode(const CorpusConfig& corpus_config, ModelConfig model_config,
                          TrainConfig train_config, uint64_t episode_seed,
                          const CheckpointSink<float>& sink = {});

// Per-pair mean and sample standard deviation over episodes. Every episode
// must cover the same pairs.
AggregateReport aggregate(std::span<const EpisodeReport> reports);

// Table-style "99.3 ± 0.2" with one decimal place.
std::string format_mean_std(double mean, double stddev);

// FNV-1a over the parameter bytes; identifies a set of trained weights.
std::string params_fingerprint(const Model& model);

} // namespace orthoscore
