#include "orthoscore/codec.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "orthoscore/tensor.hpp" // kIgnoreTarget
#include "orthoscore/unicode.hpp"

namespace orthoscore {

namespace {

void check_field(const std::u32string& value, const std::string& field, const Sample& sample) {
    for (char32_t cp : value) {
        if (cp == kSeparator) {
            fail(ErrorKind::Validation, "sample " + utf8_encode(serialize_text(sample)) + ": " +
                                            field + " contains the field separator ','");
        }
        if (is_space(cp)) {
            fail(ErrorKind::Validation, "sample " + utf8_encode(serialize_text(sample)) + ": " +
                                            field + " contains whitespace");
        }
    }
}

} // namespace

void Sample::validate() const {
    if (orthography.size() < 2 || orthography.size() > 3) {
        fail(ErrorKind::Validation,
             "sample: orthography code '" + orthography + "' must be 2-3 characters");
    }
    if (task != "write" && task != "read") {
        fail(ErrorKind::Validation, "sample: task '" + task + "' must be 'write' or 'read'");
    }
    if (input.empty() || output.empty()) {
        fail(ErrorKind::Validation, "sample " + orthography + "," + task + ": empty field");
    }
    if (input.size() > kMaxWordLen || output.size() > kMaxWordLen) {
        fail(ErrorKind::Validation, "sample " + orthography + "," + task + ": field longer than " +
                                        std::to_string(kMaxWordLen) + " characters");
    }
    check_field(utf8_decode(orthography), "orthography", *this);
    check_field(utf8_decode(task), "task", *this);
    check_field(input, "input", *this);
    check_field(output, "output", *this);
}

Vocab Vocab::build(std::span<const Sample> samples) {
    if (samples.empty()) {
        fail(ErrorKind::Validation, "build_vocab: empty sample collection");
    }
    std::set<char32_t> seen;
    for (const auto& sample : samples) {
        sample.validate();
        for (char32_t cp : serialize_text(sample)) {
            seen.insert(cp);
        }
    }
    return from_chars({seen.begin(), seen.end()});
}

Vocab Vocab::from_chars(std::vector<char32_t> chars) {
    std::sort(chars.begin(), chars.end());
    chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
    Vocab v;
    v.chars_ = std::move(chars);
    for (size_t i = 0; i < v.chars_.size(); ++i) {
        v.to_id_.emplace(v.chars_[i], static_cast<int32_t>(i) + 2);
    }
    return v;
}

int32_t Vocab::encode_char(char32_t cp) const {
    const auto it = to_id_.find(cp);
    if (it == to_id_.end()) {
        fail(ErrorKind::Encoding, "character '" + utf8_encode(cp) + "' (U+" +
                                      [](char32_t c) {
                                          char buf[16];
                                          std::snprintf(buf, sizeof buf, "%04X",
                                                        static_cast<unsigned>(c));
                                          return std::string(buf);
                                      }(cp) +
                                      ") is not in the vocabulary");
    }
    return it->second;
}

char32_t Vocab::decode_char(int32_t id) const {
    if (id < 2 || id >= size()) {
        fail(ErrorKind::Index, "token id " + std::to_string(id) + " does not decode to a character");
    }
    return chars_[static_cast<size_t>(id - 2)];
}

std::vector<int32_t> Vocab::encode(std::u32string_view text) const {
    std::vector<int32_t> out;
    out.reserve(text.size());
    for (char32_t cp : text) {
        out.push_back(encode_char(cp));
    }
    return out;
}

std::u32string Vocab::decode(std::span<const int32_t> ids) const {
    std::u32string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
        out.push_back(decode_char(id));
    }
    return out;
}

std::u32string serialize_text(const Sample& sample) {
    std::u32string out;
    out.reserve(sample.input.size() + sample.output.size() + 12);
    out += utf8_decode(sample.orthography);
    out += kSeparator;
    out += utf8_decode(sample.task);
    out += kSeparator;
    out += sample.input;
    out += kSeparator;
    out += sample.output;
    return out;
}

std::vector<int32_t> serialize_tokens(const Sample& sample, const Vocab& vocab) {
    sample.validate();
    auto tokens = vocab.encode(serialize_text(sample));
    tokens.push_back(kEotId);
    return tokens;
}

int64_t serialized_length(const Sample& sample) {
    return static_cast<int64_t>(serialize_text(sample).size()) + 1;
}

TrainingBlock to_training_block(const Sample& sample, const Vocab& vocab, int64_t block_size) {
    auto tokens = serialize_tokens(sample, vocab);
    const int64_t len = static_cast<int64_t>(tokens.size());
    if (len > block_size) {
        fail(ErrorKind::Length, "sample " + utf8_encode(serialize_text(sample)) +
                                    " serializes to " + std::to_string(len) +
                                    " tokens, over block size " + std::to_string(block_size));
    }
    // Prompt runs through the third separator; predictions of prompt
    // characters and of post-EOT padding carry no loss.
    const int64_t prompt_len = static_cast<int64_t>(sample.orthography.size()) + 1 +
                               static_cast<int64_t>(sample.task.size()) + 1 +
                               static_cast<int64_t>(sample.input.size()) + 1;
    tokens.resize(static_cast<size_t>(block_size) + 1, kPadId);
    TrainingBlock block;
    block.x.assign(tokens.begin(), tokens.begin() + block_size);
    block.y.resize(static_cast<size_t>(block_size), kIgnoreTarget);
    for (int64_t i = 0; i < block_size; ++i) {
        const int64_t target_pos = i + 1;
        if (target_pos >= prompt_len && target_pos <= len - 1) {
            block.y[static_cast<size_t>(i)] = tokens[static_cast<size_t>(target_pos)];
        }
    }
    return block;
}

std::vector<int32_t> make_prompt(const std::string& orthography, const std::string& task,
                                 std::u32string_view input, const Vocab& vocab) {
    Sample probe{orthography, task, std::u32string(input), U"?"};
    probe.validate(); // field-level checks; output placeholder is irrelevant
    std::u32string text;
    text += utf8_decode(orthography);
    text += kSeparator;
    text += utf8_decode(task);
    text += kSeparator;
    text += input;
    text += kSeparator;
    return vocab.encode(text);
}

} // namespace orthoscore
