#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "orthoscore/evaluator.hpp"
#include "orthoscore/rng.hpp"
#include "orthoscore/unicode.hpp"

using namespace orthoscore;

TEST_CASE("exact_match basics") {
    CHECK(exact_match(U"job", U"job"));
    CHECK_FALSE(exact_match(U"jobs", U"job"));
    CHECK_FALSE(exact_match(U"job", U"jobs"));
    CHECK_FALSE(exact_match(U"", U"a"));
    CHECK(exact_match(U"", U""));
    // a single-character difference fails
    CHECK_FALSE(exact_match(utf8_decode("liv9l"), utf8_decode("lEv9l")));
}

TEST_CASE("exact_match agrees with a character-by-character reference") {
    Rng rng(3);
    const std::u32string alphabet = U"abcde";
    for (int trial = 0; trial < 10000; ++trial) {
        auto gen = [&]() {
            std::u32string s;
            const uint64_t len = rng.uniform_int(6);
            for (uint64_t i = 0; i < len; ++i) {
                s.push_back(alphabet[rng.uniform_int(alphabet.size())]);
            }
            return s;
        };
        const auto a = gen();
        const auto b = rng.uniform() < 0.3 ? a : gen();

        bool reference = a.size() == b.size();
        for (size_t i = 0; reference && i < a.size(); ++i) {
            reference = a[i] == b[i];
        }
        CHECK(exact_match(a, b) == reference);
    }
}

TEST_CASE("score_pair with stub predictors") {
    std::vector<Sample> samples;
    for (int i = 0; i < 40; ++i) {
        std::u32string word(1 + static_cast<size_t>(i % 5), static_cast<char32_t>(U'a' + i % 3));
        samples.push_back({"xx", "write", word, word});
    }

    SUBCASE("an oracle stub scores 100%") {
        auto oracle = [&](const std::string&, const std::string&, const std::u32string& input) {
            return input; // targets equal inputs above
        };
        auto score = score_pair(oracle, samples);
        CHECK(score.correct == 40);
        CHECK(score.total == 40);
        CHECK(score.percentage == 100.0);
    }
    SUBCASE("a fixed wrong character scores 0%") {
        auto wrong = [](const std::string&, const std::string&, const std::u32string&) {
            return std::u32string(U"!");
        };
        auto score = score_pair(wrong, samples);
        CHECK(score.correct == 0);
        CHECK(score.percentage == 0.0);
    }
    SUBCASE("scoring is invariant under sample permutation") {
        auto half = [](const std::string&, const std::string&, const std::u32string& input) {
            return input.size() % 2 == 0 ? input : std::u32string(U"!");
        };
        auto base = score_pair(half, samples);
        auto shuffled = samples;
        Rng rng(5);
        rng.shuffle(shuffled);
        auto permuted = score_pair(half, shuffled);
        CHECK(base.correct == permuted.correct);
        CHECK(base.percentage == permuted.percentage);
    }
    SUBCASE("empty sample lists are rejected") {
        auto oracle = [](const std::string&, const std::string&, const std::u32string& input) {
            return input;
        };
        CHECK_THROWS_AS(score_pair(oracle, std::span<const Sample>{}), Error);
    }
    SUBCASE("mixed pairs are rejected") {
        auto mixed = samples;
        mixed.push_back({"yy", "write", U"a", U"a"});
        auto oracle = [](const std::string&, const std::string&, const std::u32string& input) {
            return input;
        };
        CHECK_THROWS_AS(score_pair(oracle, mixed), Error);
    }
}

TEST_CASE("predict on an untrained model honors the output contract") {
    std::vector<Sample> samples{{"xx", "write", U"abc", U"abc"},
                                {"xx", "read", U"cba", U"cba"}};
    auto vocab = Vocab::build(samples);
    ModelConfig cfg;
    cfg.block_size = 63;
    cfg.n_layer = 1;
    cfg.n_head = 2;
    cfg.n_embd = 16;
    cfg.vocab_size = vocab.size();
    cfg.dropout_rate = 0.0;
    cfg.seed = 7;
    Model model(cfg);

    for (int trial = 0; trial < 10; ++trial) {
        auto out = predict(model, vocab, "xx", "write", U"abc");
        CHECK(out.size() <= 26);
        for (char32_t cp : out) {
            CHECK(vocab.contains(cp));
        }
        // deterministic in eval mode
        CHECK(out == predict(model, vocab, "xx", "write", U"abc"));
    }

    CHECK_THROWS_AS(predict(model, vocab, "xx", "write", U"zzz"), Error);

    // prompt + max_len must fit the block
    ModelConfig small = cfg;
    small.block_size = 20;
    Model short_model(small);
    CHECK_THROWS_AS(predict(short_model, vocab, "xx", "write", U"abc", 26), Error);
    CHECK_NOTHROW(predict(short_model, vocab, "xx", "write", U"abc", 5));
}

TEST_CASE("model-backed score_pair equals the stub route on the same predictions") {
    std::vector<Sample> samples;
    for (int i = 0; i < 12; ++i) {
        std::u32string word(1 + static_cast<size_t>(i % 4), static_cast<char32_t>(U'a' + i % 2));
        samples.push_back({"xx", "read", word, word});
    }
    auto vocab = Vocab::build(samples);
    ModelConfig cfg;
    cfg.block_size = 63;
    cfg.n_layer = 1;
    cfg.n_head = 1;
    cfg.n_embd = 8;
    cfg.vocab_size = vocab.size();
    cfg.dropout_rate = 0.0;
    Model model(cfg);

    auto direct = score_pair(model, vocab, samples);
    auto through_stub = score_pair(
        [&](const std::string& o, const std::string& t, const std::u32string& in) {
            return predict(model, vocab, o, t, in);
        },
        samples);
    CHECK(direct.correct == through_stub.correct);
    CHECK(direct.total == through_stub.total);
}

TEST_CASE("aggregate computes mean and sample standard deviation") {
    EpisodeReport a{{{"eo", "write", 10, 100, 10.0}}, 1, "x"};
    EpisodeReport b{{{"eo", "write", 20, 100, 20.0}}, 2, "y"};
    auto agg = aggregate(std::vector<EpisodeReport>{a, b});
    REQUIRE(agg.rows.size() == 1);
    CHECK(agg.rows[0].mean == doctest::Approx(15.0));
    CHECK(agg.rows[0].stddev == doctest::Approx(7.0710678).epsilon(1e-6));
    CHECK(agg.rows[0].episodes == 2);

    SUBCASE("identical episodes have zero deviation") {
        auto same = aggregate(std::vector<EpisodeReport>{a, a, a});
        CHECK(same.rows[0].mean == 10.0);
        CHECK(same.rows[0].stddev == 0.0);
    }
    SUBCASE("fewer than two episodes is an error") {
        CHECK_THROWS_AS(aggregate(std::vector<EpisodeReport>{a}), Error);
    }
    SUBCASE("mismatched pair sets are an error") {
        EpisodeReport c{{{"eo", "read", 5, 100, 5.0}}, 3, "z"};
        CHECK_THROWS_AS(aggregate(std::vector<EpisodeReport>{a, c}), Error);
        EpisodeReport d{{{"eo", "write", 5, 100, 5.0}, {"eo", "read", 5, 100, 5.0}}, 4, "w"};
        CHECK_THROWS_AS(aggregate(std::vector<EpisodeReport>{a, d}), Error);
    }
}

TEST_CASE("mean/std formatting matches the table style") {
    CHECK(format_mean_std(99.25, 0.21) == "99.3 ± 0.2");
    CHECK(format_mean_std(0.0, 0.0) == "0.0 ± 0.0");
    CHECK(format_mean_std(31.1, 1.3) == "31.1 ± 1.3");
}

TEST_CASE("run_episode is reproducible and scores every pair") {
    CorpusConfig corpus;
    corpus.sources = {{"aa", GeneratorSpec{"ent", 30}, {}, {}},
                      {"bb", GeneratorSpec{"eno", 30}, {}, {}}};
    corpus.n_train = 24;
    corpus.n_test = 6;

    ModelConfig mc;
    mc.block_size = 63;
    mc.n_layer = 1;
    mc.n_head = 2;
    mc.n_embd = 16;
    mc.dropout_rate = 0.0;

    TrainConfig tc;
    tc.batch_size = 8;
    tc.max_steps = 6;
    tc.warmup_steps = 1;

    auto a = run_episode(corpus, mc, tc, 12345);
    auto b = run_episode(corpus, mc, tc, 12345);
    REQUIRE(a.scores.size() == 4);
    CHECK(a.checkpoint_id == b.checkpoint_id);
    for (size_t i = 0; i < a.scores.size(); ++i) {
        CHECK(a.scores[i].orthography == b.scores[i].orthography);
        CHECK(a.scores[i].task == b.scores[i].task);
        CHECK(a.scores[i].correct == b.scores[i].correct);
        CHECK(a.scores[i].total == 6);
    }

    auto c = run_episode(corpus, mc, tc, 999);
    CHECK(c.seed == 999);
}
