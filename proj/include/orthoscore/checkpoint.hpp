#pragma once

#include <iosfwd>
#include <string>

#include "orthoscore/codec.hpp"
#include "orthoscore/model.hpp"

namespace orthoscore {

// Checkpoint wire format: magic "OTEANN1\0", one format-version byte, a
// u32-LE length-prefixed UTF-8 JSON header (config, vocab listing, named
// array manifest with shapes), then raw little-endian float32 arrays in
// manifest order.
inline constexpr char kCheckpointMagic[8] = {'O', 'T', 'E', 'A', 'N', 'N', '1', '\0'};
inline constexpr uint8_t kCheckpointVersion = 1;

struct Checkpoint {
    Model model;
    ModelConfig config;
    Vocab vocab;
};

void save_checkpoint(std::ostream& out, const Model& model, const Vocab& vocab);
void save_checkpoint_file(const std::string& path, const Model& model, const Vocab& vocab);

Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint_file(const std::string& path);

} // namespace orthoscore
