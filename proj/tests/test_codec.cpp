#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include "orthoscore/codec.hpp"
#include "orthoscore/corpus.hpp"
#include "orthoscore/tensor.hpp"
#include "orthoscore/unicode.hpp"

using namespace orthoscore;

TEST_CASE("build_vocab enumerates exactly the serialized characters plus controls") {
    std::vector<Sample> samples{{"en", "write", U"ab", U"ba"}};
    auto vocab = Vocab::build(samples);
    const std::set<char32_t> expected{U'a', U'b', U'e', U'n', U'w', U'r', U'i', U't', U','};
    CHECK(std::set<char32_t>(vocab.chars().begin(), vocab.chars().end()) == expected);
    CHECK(vocab.size() == static_cast<int64_t>(expected.size()) + 2);

    // ids 0/1 are reserved for the controls; characters sort by code point
    CHECK(vocab.encode_char(U',') == 2);
    for (char32_t cp : expected) {
        CHECK(vocab.decode_char(vocab.encode_char(cp)) == cp);
    }
}

TEST_CASE("vocab construction is deterministic") {
    std::vector<Sample> samples{{"eo", "write", U"amiko", U"amiko"},
                                {"eo", "read", U"amiko", U"amiko"}};
    auto a = Vocab::build(samples);
    std::reverse(samples.begin(), samples.end());
    auto b = Vocab::build(samples);
    CHECK(a == b);
    for (char32_t cp : a.chars()) {
        CHECK(a.encode_char(cp) == b.encode_char(cp));
    }
}

TEST_CASE("samples with reserved characters are rejected by name") {
    std::vector<Sample> bad{{"en", "write", U"a,b", U"ab"}};
    try {
        Vocab::build(bad);
        FAIL("expected a validation error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Validation);
        CHECK(std::string(e.what()).find("separator") != std::string::npos);
    }
    std::vector<Sample> spaced{{"en", "write", U"a b", U"ab"}};
    CHECK_THROWS_AS(Vocab::build(spaced), Error);
}

TEST_CASE("serialize matches the four-feature comma layout") {
    Sample write{"en", "write", utf8_decode("dʒɒb"), U"job"};
    CHECK(utf8_encode(serialize_text(write)) == "en,write,dʒɒb,job");
    Sample read{"en", "read", U"job", utf8_decode("dʒɒb")};
    CHECK(utf8_encode(serialize_text(read)) == "en,read,job,dʒɒb");

    auto vocab = Vocab::build(std::vector<Sample>{write, read});
    auto tokens = serialize_tokens(write, vocab);
    CHECK(tokens.back() == kEotId);
    CHECK(static_cast<int64_t>(tokens.size()) == serialized_length(write));
}

TEST_CASE("maximal fields serialize within the 63-character block") {
    Sample s{"ent", "write", std::u32string(25, U'x'), std::u32string(25, U'y')};
    CHECK(serialized_length(s) == 62);
    CHECK(serialized_length(s) <= 63 - 1);
}

TEST_CASE("training block masks the prompt and activates output plus EOT") {
    std::vector<Sample> samples{{"ent", "write", U"ab", U"ab"}};
    auto vocab = Vocab::build(samples);
    auto block = to_training_block(samples[0], vocab, 63);
    REQUIRE(block.x.size() == 63);
    REQUIRE(block.y.size() == 63);

    std::vector<int32_t> active;
    for (int32_t target : block.y) {
        if (target != kIgnoreTarget) {
            active.push_back(target);
        }
    }
    // exactly 'a', 'b', EOT
    REQUIRE(active.size() == 3);
    CHECK(active[0] == vocab.encode_char(U'a'));
    CHECK(active[1] == vocab.encode_char(U'b'));
    CHECK(active[2] == kEotId);

    // x is the serialization padded with PAD
    const auto serialized = serialize_tokens(samples[0], vocab);
    for (size_t i = 0; i < serialized.size(); ++i) {
        CHECK(block.x[i] == serialized[i]);
    }
    for (size_t i = serialized.size(); i < block.x.size(); ++i) {
        CHECK(block.x[i] == kPadId);
    }
}

TEST_CASE("decoding a block up to EOT reproduces the sample") {
    std::vector<Sample> samples{{"eo", "read", U"hundo", U"hundo"},
                                {"xy", "write", U"ab", U"cd"}};
    auto vocab = Vocab::build(samples);
    for (const auto& sample : samples) {
        auto block = to_training_block(sample, vocab, 63);
        std::u32string text;
        for (int32_t id : block.x) {
            if (id == kEotId || id == kPadId) {
                break;
            }
            text.push_back(vocab.decode_char(id));
        }
        // split on commas
        std::vector<std::u32string> fields{U""};
        for (char32_t cp : text) {
            if (cp == U',') {
                fields.emplace_back();
            } else {
                fields.back().push_back(cp);
            }
        }
        REQUIRE(fields.size() == 4);
        CHECK(utf8_encode(fields[0]) == sample.orthography);
        CHECK(utf8_encode(fields[1]) == sample.task);
        CHECK(fields[2] == sample.input);
        CHECK(fields[3] == sample.output);
    }
}

TEST_CASE("loss-active positions over a generated corpus count output+1 each") {
    auto entries = make_esperanto_like(200, 31);
    auto bundle = build_dataset({{"eo", entries}}, 80, 20, 7);
    std::vector<Sample> all = bundle.train;
    all.insert(all.end(), bundle.test.begin(), bundle.test.end());
    auto vocab = Vocab::build(all);

    int64_t active_total = 0;
    int64_t expected_total = 0;
    for (const auto& sample : all) {
        auto block = to_training_block(sample, vocab, 63);
        for (int32_t t : block.y) {
            if (t != kIgnoreTarget) {
                ++active_total;
            }
        }
        expected_total += static_cast<int64_t>(sample.output.size()) + 1;
    }
    CHECK(active_total == expected_total);
}

TEST_CASE("prompt-region targets are ignored, output-region targets are not") {
    // Property against an independent re-parse of the serialized string.
    auto entries = make_synthetic(120, 2, 3, 9, 77);
    auto bundle = build_dataset({{"sy", entries}}, 50, 10, 3);
    auto vocab = Vocab::build(bundle.train);
    for (const auto& sample : bundle.train) {
        const std::string serialized = utf8_encode(serialize_text(sample));
        const auto third_comma = serialized.find(',', serialized.find(',', serialized.find(',') + 1) + 1);
        const auto prompt_chars = utf8_decode(serialized.substr(0, third_comma + 1)).size();
        const auto total_chars = utf8_decode(serialized).size();

        auto block = to_training_block(sample, vocab, 63);
        for (size_t i = 0; i < block.y.size(); ++i) {
            const size_t predicted_pos = i + 1;
            const bool in_output = predicted_pos >= prompt_chars && predicted_pos <= total_chars;
            CHECK((block.y[i] != kIgnoreTarget) == in_output);
        }
    }
}

TEST_CASE("overlong samples are rejected at block build time") {
    Sample s{"ent", "write", std::u32string(25, U'x'), std::u32string(25, U'y')};
    auto vocab = Vocab::build(std::vector<Sample>{s});
    CHECK_THROWS_AS(to_training_block(s, vocab, 32), Error);
}

TEST_CASE("make_prompt emits the three leading features") {
    std::vector<Sample> samples{{"en", "write", utf8_decode("dʒɒb"), U"job"},
                                {"ent", "read", U"x", U"x"}};
    auto vocab = Vocab::build(samples);

    auto prompt = make_prompt("en", "write", utf8_decode("dʒɒb"), vocab);
    CHECK(vocab.decode(prompt) == utf8_decode("en,write,dʒɒb,"));

    auto prompt2 = make_prompt("ent", "read", U"x", vocab);
    CHECK(vocab.decode(prompt2) == utf8_decode("ent,read,x,"));

    // arithmetic bound: 3 + 1 + 5 + 1 + 25 + 1
    Sample max_s{"ent", "write", std::u32string(25, U'x'), U"y"};
    auto vocab2 = Vocab::build(std::vector<Sample>{max_s});
    auto prompt3 = make_prompt("ent", "write", std::u32string(25, U'x'), vocab2);
    CHECK(prompt3.size() == 36);
}

TEST_CASE("unknown characters raise an encoding error that names the character") {
    std::vector<Sample> samples{{"en", "write", U"ab", U"ba"}};
    auto vocab = Vocab::build(samples);
    try {
        make_prompt("en", "write", U"zz", vocab);
        FAIL("expected an encoding error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Encoding);
        CHECK(std::string(e.what()).find("z") != std::string::npos);
    }
}

TEST_CASE("encode/decode are mutually inverse over the vocabulary") {
    auto entries = make_esperanto_like(50, 5);
    auto bundle = build_dataset({{"eo", entries}}, 30, 10, 9);
    auto vocab = Vocab::build(bundle.train);

    for (const auto& sample : bundle.train) {
        auto text = serialize_text(sample);
        CHECK(vocab.decode(vocab.encode(text)) == text);
    }
    std::vector<int32_t> ids;
    for (int32_t id = 2; id < vocab.size(); ++id) {
        ids.push_back(id);
    }
    CHECK(vocab.encode(vocab.decode(ids)) == ids);
}

TEST_CASE("serialize is injective over distinct valid samples") {
    auto entries = make_esperanto_like(300, 15);
    auto bundle = build_dataset({{"eo", entries}}, 120, 30, 2);
    std::set<std::u32string> seen;
    for (const auto& sample : bundle.train) {
        CHECK(seen.insert(serialize_text(sample)).second);
    }
}
