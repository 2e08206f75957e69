#include "orthoscore/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "orthoscore/rng.hpp"
#include "orthoscore/unicode.hpp"

namespace orthoscore {

namespace {

// 25 graphemes backing the opaque baseline.
const std::u32string kOpaqueGraphemes = U"abcdefghijklmnopqrstuvwxy";

// 25-symbol Esperanto-like phoneme inventory.
const std::u32string kEsperantoPhonemes = U"abcdefghijklmnoprstuvzʃʒx";

// Grapheme pool for the synthetic family; disjoint k-sized sets per phoneme
// are carved out of this list, so ambiguity factors up to 4 are supported.
const std::u32string kSyntheticGraphemePool =
    U"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    U"àáâãäåæçèéêë"
    U"ìíîïðñòóôõöø"
    U"ùúûüýþÿ"
    U"āăąćĉčďđēĕėę"
    U"ěĝğġģĥħĩīĭįı"
    U"ĵķĺļľŀłńņňōŏ"
    U"őœŕŗřśŝşšťŧũ"
    U"ūŭůűųŵŷźżž";

// 25-symbol phoneme inventory for the synthetic family.
const std::u32string kSyntheticPhonemes = U"abcdefghijklmnopqrstuvwxy";

bool contains_reserved(const std::u32string& s) {
    for (char32_t cp : s) {
        if (cp == kSeparator) {
            return true;
        }
    }
    return false;
}

bool contains_space(const std::u32string& s) {
    return std::any_of(s.begin(), s.end(), is_space);
}

bool contains_upper(const std::u32string& s) {
    return std::any_of(s.begin(), s.end(), is_upper);
}

} // namespace

OrthographySpec default_spec(const std::string& code) {
    OrthographySpec spec;
    spec.code = code;
    // Primary and secondary stress, syllable dots, tie bars, tones.
    spec.ipa_strip = utf8_decode("ˈˌ.‿͜͡˥˦˧˨˩");
    spec.ipa_keep = utf8_decode("ː");
    if (code == "de") {
        spec.keep_capitals = true;
        spec.lowercase_required = false;
    }
    return spec;
}

std::vector<LexiconEntry> load_lexicon(std::istream& in, const OrthographySpec& spec,
                                       IngestStats* stats) {
    IngestStats local;
    IngestStats& st = stats ? *stats : local;
    std::set<char32_t> strip(spec.ipa_strip.begin(), spec.ipa_strip.end());
    for (char32_t cp : spec.ipa_keep) {
        strip.erase(cp);
    }
    std::set<char32_t> alphabet;
    if (spec.alphabet) {
        alphabet.insert(spec.alphabet->begin(), spec.alphabet->end());
    }

    std::vector<LexiconEntry> entries;
    std::set<LexiconEntry> seen;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size() ||
            line.find('\t', tab + 1) != std::string::npos) {
            fail(ErrorKind::Ingest, "lexicon " + spec.code + ": malformed row at line " +
                                        std::to_string(line_no) +
                                        " (expected 'spelled<TAB>pron')");
        }
        ++st.total_rows;
        LexiconEntry entry;
        entry.spelled = nfc(utf8_decode(line.substr(0, tab)));
        entry.pron = nfc(utf8_decode(line.substr(tab + 1)));

        std::u32string pron;
        pron.reserve(entry.pron.size());
        for (char32_t cp : entry.pron) {
            if (!strip.count(cp)) {
                pron.push_back(cp);
            }
        }
        entry.pron = std::move(pron);

        if (entry.spelled.empty() || entry.pron.empty()) {
            ++st.dropped_empty;
            continue;
        }
        if (contains_space(entry.spelled) || contains_space(entry.pron)) {
            ++st.dropped_space;
            continue;
        }
        if (entry.spelled.size() > kMaxWordLen || entry.pron.size() > kMaxWordLen) {
            ++st.dropped_too_long;
            continue;
        }
        if (!spec.keep_capitals && spec.lowercase_required && contains_upper(entry.spelled)) {
            ++st.dropped_capitals;
            continue;
        }
        if (spec.alphabet) {
            const bool ok = std::all_of(entry.spelled.begin(), entry.spelled.end(),
                                        [&](char32_t cp) { return alphabet.count(cp) != 0; });
            if (!ok) {
                ++st.dropped_non_alphabet;
                continue;
            }
        }
        if (contains_reserved(entry.spelled) || contains_reserved(entry.pron)) {
            ++st.dropped_reserved;
            continue;
        }
        if (!seen.insert(entry).second) {
            ++st.dropped_duplicate;
            continue;
        }
        ++st.kept;
        entries.push_back(std::move(entry));
    }
    return entries;
}

std::vector<LexiconEntry> load_lexicon_file(const std::string& path, const OrthographySpec& spec,
                                            IngestStats* stats) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot open lexicon file: " + path);
    }
    return load_lexicon(in, spec, stats);
}

std::vector<LexiconEntry> make_ent(std::span<const LexiconEntry> entries) {
    if (entries.empty()) {
        fail(ErrorKind::Validation, "make_ent: empty entry list");
    }
    std::vector<LexiconEntry> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        out.push_back({e.pron, e.pron});
    }
    return out;
}

std::vector<LexiconEntry> make_eno(std::span<const LexiconEntry> entries, uint64_t seed) {
    if (entries.empty()) {
        fail(ErrorKind::Validation, "make_eno: empty entry list");
    }
    Rng rng(seed);
    std::vector<LexiconEntry> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        std::u32string spelled;
        spelled.reserve(e.pron.size());
        for (size_t i = 0; i < e.pron.size(); ++i) {
            spelled.push_back(kOpaqueGraphemes[rng.uniform_int(kOpaqueGraphemes.size())]);
        }
        out.push_back({std::move(spelled), e.pron});
    }
    return out;
}

std::vector<LexiconEntry> make_synthetic(int64_t n_words, int64_t ambiguity, int64_t min_len,
                                         int64_t max_len, uint64_t seed) {
    const int64_t n_phonemes = static_cast<int64_t>(kSyntheticPhonemes.size());
    if (ambiguity < 1) {
        fail(ErrorKind::Config, "make_synthetic: ambiguity factor must be >= 1");
    }
    if (ambiguity * n_phonemes > static_cast<int64_t>(kSyntheticGraphemePool.size())) {
        fail(ErrorKind::Config, "make_synthetic: ambiguity " + std::to_string(ambiguity) +
                                    " needs " + std::to_string(ambiguity * n_phonemes) +
                                    " graphemes, pool has " +
                                    std::to_string(kSyntheticGraphemePool.size()));
    }
    if (min_len < 1 || max_len < min_len || max_len > static_cast<int64_t>(kMaxWordLen)) {
        fail(ErrorKind::Config, "make_synthetic: invalid length range");
    }
    Rng rng(seed);
    std::vector<LexiconEntry> out;
    out.reserve(static_cast<size_t>(n_words));
    std::set<std::u32string> seen;
    while (static_cast<int64_t>(out.size()) < n_words) {
        const int64_t len = min_len + static_cast<int64_t>(rng.uniform_int(
                                          static_cast<uint64_t>(max_len - min_len + 1)));
        std::u32string pron;
        pron.reserve(static_cast<size_t>(len));
        for (int64_t i = 0; i < len; ++i) {
            pron.push_back(kSyntheticPhonemes[rng.uniform_int(static_cast<uint64_t>(n_phonemes))]);
        }
        // The final slot is the one ambiguous choice per word.
        const int64_t final_slot =
            ambiguity == 1 ? 0 : static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(ambiguity)));
        if (!seen.insert(pron).second) {
            continue;
        }
        std::u32string spelled;
        spelled.reserve(pron.size());
        for (size_t i = 0; i < pron.size(); ++i) {
            const int64_t phoneme_index = kSyntheticPhonemes.find(pron[i]);
            const int64_t choice = (i + 1 == pron.size()) ? final_slot : 0;
            spelled.push_back(kSyntheticGraphemePool[phoneme_index * ambiguity + choice]);
        }
        out.push_back({std::move(spelled), std::move(pron)});
    }
    return out;
}

std::vector<LexiconEntry> make_esperanto_like(int64_t n_words, uint64_t seed) {
    const std::u32string vowels = U"aeiou";
    const std::u32string consonants = U"bcdfghjklmnprstvzʃʒx";
    const std::vector<std::u32string> endings = {U"o",  U"a",  U"e",  U"i",  U"on",
                                                 U"an", U"oj", U"as", U"is", U"os"};
    Rng rng(seed);
    std::vector<LexiconEntry> out;
    out.reserve(static_cast<size_t>(n_words));
    std::set<std::u32string> seen;
    while (static_cast<int64_t>(out.size()) < n_words) {
        std::u32string pron;
        const uint64_t syllables = 2 + rng.uniform_int(3);
        for (uint64_t s = 0; s < syllables; ++s) {
            pron.push_back(consonants[rng.uniform_int(consonants.size())]);
            pron.push_back(vowels[rng.uniform_int(vowels.size())]);
            if (rng.uniform() < 0.2) {
                const std::u32string codas = U"nsrlm";
                pron.push_back(codas[rng.uniform_int(codas.size())]);
            }
        }
        pron += endings[rng.uniform_int(endings.size())];
        if (pron.size() > kMaxWordLen || !seen.insert(pron).second) {
            continue;
        }
        out.push_back({pron, pron});
    }
    return out;
}

DatasetBundle build_dataset(const std::map<std::string, std::vector<LexiconEntry>>& lexicons,
                            int64_t n_train, int64_t n_test, uint64_t seed) {
    if (n_train < 1 || n_test < 1) {
        fail(ErrorKind::Config, "build_dataset: n_train and n_test must be positive");
    }
    DatasetBundle bundle;
    bundle.seed = seed;
    for (const auto& [code, entries] : lexicons) { // std::map: codes already sorted
        const int64_t need = n_train + n_test;
        const int64_t have = static_cast<int64_t>(entries.size());
        if (have < need) {
            fail(ErrorKind::Validation, "orthography '" + code + "' has " + std::to_string(have) +
                                            " entries, " + std::to_string(need - have) +
                                            " short of the requested " + std::to_string(need));
        }
        Rng rng(mix_seed(seed, std::hash<std::string>{}(code)));
        std::vector<int64_t> order(static_cast<size_t>(have));
        for (int64_t i = 0; i < have; ++i) {
            order[static_cast<size_t>(i)] = i;
        }
        rng.shuffle(order);
        auto emit = [&](const LexiconEntry& e, std::vector<Sample>& sink) {
            sink.push_back({code, "write", e.pron, e.spelled});
            sink.push_back({code, "read", e.spelled, e.pron});
        };
        for (int64_t i = 0; i < n_train; ++i) {
            emit(entries[static_cast<size_t>(order[static_cast<size_t>(i)])], bundle.train);
        }
        for (int64_t i = n_train; i < need; ++i) {
            emit(entries[static_cast<size_t>(order[static_cast<size_t>(i)])], bundle.test);
        }
        bundle.counts[code] = {n_train * 2, n_test * 2};
    }
    Rng shuffle_rng(mix_seed(seed, 0x7261696e5348ULL));
    shuffle_rng.shuffle(bundle.train);
    return bundle;
}

std::map<std::string, std::vector<LexiconEntry>>
materialize_lexicons(const CorpusConfig& config, uint64_t data_seed,
                     std::map<std::string, IngestStats>* stats) {
    std::vector<std::string> codes;
    for (const auto& src : config.sources) {
        codes.push_back(src.code);
    }
    std::sort(codes.begin(), codes.end());
    if (std::adjacent_find(codes.begin(), codes.end()) != codes.end()) {
        fail(ErrorKind::Config, "duplicate orthography code in corpus configuration");
    }

    std::map<std::string, std::vector<LexiconEntry>> out;
    for (const auto& src : config.sources) {
        const uint64_t src_seed = mix_seed(data_seed, std::hash<std::string>{}(src.code));
        std::vector<LexiconEntry> entries;
        if (src.generator) {
            const auto& g = *src.generator;
            if (g.entries < 1) {
                fail(ErrorKind::Config, "generator for '" + src.code + "': entries must be positive");
            }
            if (g.kind == "ent") {
                entries = make_ent(make_esperanto_like(g.entries, mix_seed(src_seed, 1)));
            } else if (g.kind == "eno") {
                entries = make_eno(make_esperanto_like(g.entries, mix_seed(src_seed, 1)),
                                   mix_seed(src_seed, 2));
            } else if (g.kind == "synthetic") {
                entries = make_synthetic(g.entries, g.ambiguity, g.min_length, g.max_length,
                                         mix_seed(src_seed, 1));
            } else if (g.kind == "esperanto") {
                entries = make_esperanto_like(g.entries, mix_seed(src_seed, 1));
            } else {
                fail(ErrorKind::Config, "unknown generator kind '" + g.kind + "' for '" +
                                            src.code + "'");
            }
            if (stats) {
                IngestStats st;
                st.total_rows = st.kept = static_cast<int64_t>(entries.size());
                (*stats)[src.code] = st;
            }
        } else if (src.lexicon_path) {
            IngestStats st;
            entries = load_lexicon_file(*src.lexicon_path, src.spec, &st);
            if (stats) {
                (*stats)[src.code] = st;
            }
        } else {
            fail(ErrorKind::Config, "orthography '" + src.code +
                                        "' has neither a lexicon path nor a generator");
        }
        out.emplace(src.code, std::move(entries));
    }
    return out;
}

} // namespace orthoscore
