// Binary model checkpoints: magic-framed, versioned, little-endian, with
// named float64 tensors plus the fitted color statistics (PCA basis and
// ab histogram) a model needs at inference time. Round trips are bit-exact.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chroma/colorspace.hpp"
#include "chroma/pca.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::string kind;         // "vae", "cvae", or "mdn"
    std::string config_json;  // model + training configuration record
    std::uint64_t seed = 0;   // seed the artifact was trained under
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::optional<PcaBasis> basis;
    std::optional<AbHistogram> hist;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);

// Validates leading and trailing magic and the format version before
// accepting anything; corruption reports the byte offset it was noticed at.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace chroma
