#include "orthoscore/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace orthoscore {

namespace {

using nlohmann::json;

void write_u32(std::ostream& out, uint32_t v) {
    unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(bytes), 4);
}

uint32_t read_u32(std::istream& in) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        fail(ErrorKind::Truncated, "checkpoint: truncated while reading a length field");
    }
    return static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
           (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
}

// Float arrays are stored little-endian; this implementation targets
// little-endian hosts.
static_assert(std::endian::native == std::endian::little);

} // namespace

void save_checkpoint(std::ostream& out, const Model& model, const Vocab& vocab) {
    const auto& cfg = model.config();
    json header;
    header["config"] = {{"block_size", cfg.block_size},   {"n_layer", cfg.n_layer},
                        {"n_head", cfg.n_head},           {"n_embd", cfg.n_embd},
                        {"vocab_size", cfg.vocab_size},   {"dropout_rate", cfg.dropout_rate},
                        {"init_std", cfg.init_std},       {"seed", cfg.seed}};
    header["vocab"] = json::array();
    for (char32_t cp : vocab.chars()) {
        header["vocab"].push_back(static_cast<uint32_t>(cp));
    }
    header["arrays"] = json::array();
    auto named = model.named_params();
    for (const auto& [name, tensor] : named) {
        header["arrays"].push_back({{"name", name}, {"shape", tensor.shape()}});
    }
    const std::string header_text = header.dump();

    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.put(static_cast<char>(kCheckpointVersion));
    write_u32(out, static_cast<uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, tensor] : named) {
        auto data = tensor.data();
        out.write(reinterpret_cast<const char*>(data.data()),
                  static_cast<std::streamsize>(data.size() * sizeof(float)));
    }
    if (!out) {
        fail(ErrorKind::Io, "checkpoint: write failed");
    }
}

void save_checkpoint_file(const std::string& path, const Model& model, const Vocab& vocab) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        fail(ErrorKind::Io, "cannot open checkpoint file for writing: " + path);
    }
    save_checkpoint(out, model, vocab);
}

Checkpoint load_checkpoint(std::istream& in) {
    char magic[sizeof kCheckpointMagic];
    if (!in.read(magic, sizeof magic)) {
        fail(ErrorKind::Truncated, "checkpoint: truncated before the magic bytes");
    }
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        fail(ErrorKind::BadMagic, "checkpoint: bad magic, not a checkpoint file");
    }
    const int version = in.get();
    if (version == std::char_traits<char>::eof()) {
        fail(ErrorKind::Truncated, "checkpoint: truncated before the version byte");
    }
    if (version != kCheckpointVersion) {
        fail(ErrorKind::BadVersion, "checkpoint: format version " + std::to_string(version) +
                                        " is not supported (expected " +
                                        std::to_string(kCheckpointVersion) + ")");
    }
    const uint32_t header_len = read_u32(in);
    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), header_len)) {
        fail(ErrorKind::Truncated, "checkpoint: truncated inside the header");
    }
    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        fail(ErrorKind::BadMagic, std::string("checkpoint: malformed header JSON: ") + e.what());
    }

    ModelConfig cfg;
    const auto& jc = header.at("config");
    cfg.block_size = jc.at("block_size").get<int64_t>();
    cfg.n_layer = jc.at("n_layer").get<int64_t>();
    cfg.n_head = jc.at("n_head").get<int64_t>();
    cfg.n_embd = jc.at("n_embd").get<int64_t>();
    cfg.vocab_size = jc.at("vocab_size").get<int64_t>();
    cfg.dropout_rate = jc.at("dropout_rate").get<double>();
    cfg.init_std = jc.at("init_std").get<double>();
    cfg.seed = jc.at("seed").get<uint64_t>();

    std::vector<char32_t> chars;
    for (const auto& v : header.at("vocab")) {
        chars.push_back(static_cast<char32_t>(v.get<uint32_t>()));
    }

    Checkpoint result{Model(cfg), cfg, Vocab::from_chars(std::move(chars))};
    auto named = result.model.named_params();
    const auto& arrays = header.at("arrays");
    if (arrays.size() != named.size()) {
        fail(ErrorKind::BadMagic, "checkpoint: manifest lists " + std::to_string(arrays.size()) +
                                      " arrays, model has " + std::to_string(named.size()));
    }
    for (size_t i = 0; i < named.size(); ++i) {
        const std::string name = arrays[i].at("name").get<std::string>();
        const auto shape = arrays[i].at("shape").get<std::vector<int64_t>>();
        if (name != named[i].first || shape != named[i].second.shape()) {
            fail(ErrorKind::BadMagic, "checkpoint: manifest entry '" + name +
                                          "' does not match model array '" + named[i].first + "'");
        }
        auto data = named[i].second.data();
        if (!in.read(reinterpret_cast<char*>(data.data()),
                     static_cast<std::streamsize>(data.size() * sizeof(float)))) {
            fail(ErrorKind::Truncated, "checkpoint: truncated inside array '" + name + "'");
        }
    }
    return result;
}

Checkpoint load_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorKind::Io, "cannot open checkpoint file: " + path);
    }
    return load_checkpoint(in);
}

} // namespace orthoscore
