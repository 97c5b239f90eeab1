// Seeded k-means over row vectors: k-means++ seeding followed by Lloyd
// iterations, used to condense many decoded color fields into a few
// representative ones.
#pragma once

#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"

#include <vector>

namespace chroma {

struct KmeansResult {
    Tensor centers;               // (k, d)
    std::vector<int> assignment;  // nearest-center index per sample row
};

// Clusters the rows of `data` (n, d) into k centers. Seeding is k-means++
// driven by `rng`; Lloyd updates run until assignments stabilize or
// `max_iters` rounds pass. Nearest-center ties resolve to the lowest index,
// and a cluster left empty keeps its previous center, so the result is
// deterministic for a fixed seed.
KmeansResult kmeans(const Tensor& data, int k, Rng& rng, int max_iters = 50);

}  // namespace chroma
