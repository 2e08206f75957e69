#include "orthoscore/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace orthoscore {

bool exact_match(std::u32string_view predicted, std::u32string_view target) {
    return predicted == target;
}

PairScore score_pair(const PredictFn& predictor, std::span<const Sample> samples) {
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
        if (exact_match(predictor(s.orthography, s.task, s.input), s.output)) {
            ++score.correct;
        }
    }
    score.percentage =
        100.0 * static_cast<double>(score.correct) / static_cast<double>(score.total);
    return score;
}

EpisodeReport run_episode(const CorpusConfig& corpus_config, ModelConfig model_config,
                          TrainConfig train_config, uint64_t episode_seed,
                          const CheckpointSink<float>& sink) {
    const uint64_t data_seed = mix_seed(episode_seed, 0xda7a);
    const uint64_t model_seed = mix_seed(episode_seed, 0x30de1);
    const uint64_t train_seed = mix_seed(episode_seed, 0x7261);

    auto lexicons = materialize_lexicons(corpus_config, data_seed);
    auto bundle = build_dataset(lexicons, corpus_config.n_train, corpus_config.n_test, data_seed);

    // Every character present in the generated datasets joins the inventory.
    std::vector<Sample> all;
    all.reserve(bundle.train.size() + bundle.test.size());
    all.insert(all.end(), bundle.train.begin(), bundle.train.end());
    all.insert(all.end(), bundle.test.begin(), bundle.test.end());
    const Vocab vocab = Vocab::build(all);

    model_config.vocab_size = vocab.size();
    model_config.seed = model_seed;
    train_config.seed = train_seed;
    Model model(model_config);
    train<float>(model, bundle.train, vocab, train_config, sink);

    EpisodeReport report;
    report.seed = episode_seed;
    report.checkpoint_id = params_fingerprint(model);
    std::map<std::pair<std::string, std::string>, std::vector<Sample>> pairs;
    for (const auto& s : bundle.test) {
        pairs[{s.orthography, s.task}].push_back(s);
    }
    for (const auto& [key, samples] : pairs) {
        report.scores.push_back(score_pair(model, vocab, samples));
    }
    return report;
}

AggregateReport aggregate(std::span<const EpisodeReport> reports) {
    if (reports.size() < 2) {
        fail(ErrorKind::Validation,
             "aggregate: at least two episodes are required for a standard deviation");
    }
    auto key_of = [](const PairScore& s) { return s.orthography + "\x1f" + s.task; };
    std::vector<std::string> keys;
    for (const auto& s : reports[0].scores) {
        keys.push_back(key_of(s));
    }
    std::map<std::string, std::vector<double>> values;
    for (const auto& report : reports) {
        if (report.scores.size() != keys.size()) {
            fail(ErrorKind::Validation, "aggregate: episodes cover different pair sets");
        }
        for (const auto& s : report.scores) {
            values[key_of(s)].push_back(s.percentage);
        }
    }
    AggregateReport out;
    for (const auto& s : reports[0].scores) {
        const auto& vals = values[key_of(s)];
        if (vals.size() != reports.size()) {
            fail(ErrorKind::Validation, "aggregate: episodes cover different pair sets");
        }
        double mean = 0;
        for (double v : vals) {
            mean += v;
        }
        mean /= static_cast<double>(vals.size());
        double sq = 0;
        for (double v : vals) {
            sq += (v - mean) * (v - mean);
        }
        const double sd = std::sqrt(sq / static_cast<double>(vals.size() - 1));
        out.rows.push_back({s.orthography, s.task, mean, sd, static_cast<int64_t>(vals.size())});
    }
    return out;
}

std::string format_mean_std(double mean, double stddev) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f ± %.1f", mean, stddev);
    return buf;
}

std::string params_fingerprint(const Model& model) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : model.params()) {
        for (float v : p.data()) {
            uint32_t bits;
            static_assert(sizeof bits == sizeof v);
            std::memcpy(&bits, &v, sizeof bits);
            for (int b = 0; b < 4; ++b) {
                h ^= (bits >> (8 * b)) & 0xFF;
                h *= 0x100000001b3ULL;
            }
        }
    }
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace orthoscore
