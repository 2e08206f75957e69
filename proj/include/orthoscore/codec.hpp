#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "orthoscore/errors.hpp"

namespace orthoscore {

inline constexpr int32_t kPadId = 0;
inline constexpr int32_t kEotId = 1;
inline constexpr char32_t kSeparator = U',';

// Field caps from the ingestion rules: codes are 2-3 characters, tasks are
// "write"/"read", words at most 25 characters. The serialized form
// orth,task,input,output plus the end marker then always fits a 63 block.
inline constexpr size_t kMaxWordLen = 25;

// One word-level translation unit.
struct Sample {
    std::string orthography; // 2-3 ASCII characters
    std::string task;        // "write" | "read"
    std::u32string input;
    std::u32string output;

    void validate() const;

    bool operator==(const Sample&) const = default;
};

// Bidirectional character <-> token-id inventory. Ids 0 and 1 are the PAD and
// end-of-text controls; characters follow sorted by code point.
class Vocab {
public:
    Vocab() = default;

    static Vocab build(std::span<const Sample> samples);
    static Vocab from_chars(std::vector<char32_t> chars);

    int64_t size() const { return static_cast<int64_t>(chars_.size()) + 2; }
    bool contains(char32_t cp) const { return to_id_.count(cp) != 0; }

    int32_t encode_char(char32_t cp) const;
    char32_t decode_char(int32_t id) const;

    std::vector<int32_t> encode(std::u32string_view text) const;
    std::u32string decode(std::span<const int32_t> ids) const;

    const std::vector<char32_t>& chars() const { return chars_; }

    bool operator==(const Vocab& other) const { return chars_ == other.chars_; }

private:
    std::vector<char32_t> chars_;
    std::unordered_map<char32_t, int32_t> to_id_;
};

// "orth,task,input,output" (the end-of-text marker is appended at token
// level). The prompt is everything through the third comma.
std::u32string serialize_text(const Sample& sample);

// Serialized sample as token ids, end marker included.
std::vector<int32_t> serialize_tokens(const Sample& sample, const Vocab& vocab);

// Character count of the serialization including the end marker.
int64_t serialized_length(const Sample& sample);

struct TrainingBlock {
    std::vector<int32_t> x; // block_size token ids, PAD-tailed
    std::vector<int32_t> y; // block_size next-token targets, kIgnoreTarget on
                            // prompt-prediction and post-EOT positions
};

TrainingBlock to_training_block(const Sample& sample, const Vocab& vocab, int64_t block_size);

// Token ids of "orth,task,input," — the evaluation-time prefix.
std::vector<int32_t> make_prompt(const std::string& orthography, const std::string& task,
                                 std::u32string_view input, const Vocab& vocab);

} // namespace orthoscore
