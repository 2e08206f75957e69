#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "orthoscore/codec.hpp"

namespace orthoscore {

struct LexiconEntry {
    std::u32string spelled;
    std::u32string pron;

    bool operator==(const LexiconEntry&) const = default;
    bool operator<(const LexiconEntry& o) const {
        return spelled != o.spelled ? spelled < o.spelled : pron < o.pron;
    }
};

struct OrthographySpec {
    std::string code;
    bool lowercase_required = true;
    bool keep_capitals = false; // German: keep capitals, skip the lowercase filter
    std::optional<std::u32string> alphabet; // allowed spelled characters
    std::u32string ipa_strip; // characters deleted from pronunciations
    std::u32string ipa_keep;  // exceptions to ipa_strip (e.g. the length mark)
};

// Stress and tone marks dropped from pronunciations by default; the length
// mark stays.
OrthographySpec default_spec(const std::string& code);

struct IngestStats {
    int64_t total_rows = 0;
    int64_t kept = 0;
    int64_t dropped_space = 0;
    int64_t dropped_too_long = 0;
    int64_t dropped_capitals = 0;
    int64_t dropped_non_alphabet = 0;
    int64_t dropped_reserved = 0;
    int64_t dropped_duplicate = 0;
    int64_t dropped_empty = 0;
};

// Reads a "spelled<TAB>pron" UTF-8 TSV ('#' lines are comments), applies NFC
// normalization, the per-orthography IPA strip list and the word filters,
// and deduplicates. Malformed rows are errors, filtered rows are counted.
std::vector<LexiconEntry> load_lexicon(std::istream& in, const OrthographySpec& spec,
                                       IngestStats* stats = nullptr);
std::vector<LexiconEntry> load_lexicon_file(const std::string& path, const OrthographySpec& spec,
                                            IngestStats* stats = nullptr);

// Identity orthography: the pronunciation is the spelling.
std::vector<LexiconEntry> make_ent(std::span<const LexiconEntry> entries);

// Opaque orthography: every phoneme occurrence independently becomes a
// uniform draw from a fixed 25-grapheme list, so spelling carries no signal.
std::vector<LexiconEntry> make_eno(std::span<const LexiconEntry> entries, uint64_t seed);

// Controlled-ambiguity family over a 25-phoneme inventory with disjoint
// grapheme sets of size k per phoneme. Every position maps to the canonical
// grapheme except the final one, drawn uniformly from the k candidates, so
// writing has exactly one k-way unresolvable slot and reading is
// deterministic.
std::vector<LexiconEntry> make_synthetic(int64_t n_words, int64_t ambiguity, int64_t min_len,
                                         int64_t max_len, uint64_t seed);

// Esperanto-like pronunciations (25-symbol inventory, CV(C) syllables,
// grammatical endings); the base lexicon behind the ent/eno generators.
std::vector<LexiconEntry> make_esperanto_like(int64_t n_words, uint64_t seed);

struct DatasetBundle {
    std::vector<Sample> train;
    std::vector<Sample> test;
    std::map<std::string, std::pair<int64_t, int64_t>> counts; // code -> (train, test) samples
    uint64_t seed = 0;
};

// Per orthography: sample n_train+n_test entries without replacement, expand
// each into a write and a read sample, split at entry level. Deterministic
// under the seed regardless of map iteration order; training order shuffled.
DatasetBundle build_dataset(const std::map<std::string, std::vector<LexiconEntry>>& lexicons,
                            int64_t n_train, int64_t n_test, uint64_t seed);

// --- corpus configuration (what the experiment layer materializes) ---

struct GeneratorSpec {
    std::string kind; // "ent" | "eno" | "synthetic" | "esperanto"
    int64_t entries = 0;
    int64_t ambiguity = 1; // synthetic only
    int64_t min_length = 4;
    int64_t max_length = 9;
};

struct OrthographySource {
    std::string code;
    std::optional<GeneratorSpec> generator;
    std::optional<std::string> lexicon_path;
    OrthographySpec spec; // filters for lexicon sources
};

struct CorpusConfig {
    std::vector<OrthographySource> sources;
    int64_t n_train = 10000;
    int64_t n_test = 1000;
};

// Generates or loads every source's entries. Generator seeds derive from the
// data seed and the orthography code (codes sorted first), so the result does
// not depend on source order.
std::map<std::string, std::vector<LexiconEntry>>
materialize_lexicons(const CorpusConfig& config, uint64_t data_seed,
                     std::map<std::string, IngestStats>* stats = nullptr);

} // namespace orthoscore
