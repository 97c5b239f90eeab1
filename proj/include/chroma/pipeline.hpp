// Glue between the trained pieces: checkpoint assembly and restoration,
// corpus embedding for the mixture stage, the grey -> k colorizations
// path, and test-split evaluation.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chroma/checkpoint.hpp"
#include "chroma/dataset.hpp"
#include "chroma/mdn.hpp"
#include "chroma/metrics.hpp"
#include "chroma/vae.hpp"

namespace chroma {

// ---- checkpoint round trips ----

Checkpoint vae_checkpoint(VaeModel& model, const PcaBasis& basis, const AbHistogram& hist,
                          std::uint64_t seed);
// Rebuilds the model recorded by `ckpt` (kind "vae" or "cvae"); optionally
// hands back the embedded color statistics.
VaeModel vae_from_checkpoint(const Checkpoint& ckpt, PcaBasis* basis_out = nullptr,
                             AbHistogram* hist_out = nullptr);

Checkpoint mdn_checkpoint(MdnModel& model, std::uint64_t seed);
MdnModel mdn_from_checkpoint(const Checkpoint& ckpt);

// ---- pipeline stages ----

// (normalized grey plane, embedding mean) for every field, using the
// frozen encoder. Greys are scaled to [0, 1] as the mixture model expects.
std::vector<std::pair<Tensor, Tensor>> embed_corpus(VaeModel& vae,
                                                    const std::vector<ColorField>& fields);

// Raw grey plane -> the k most probable modes, decoded. Fields come back
// in descending mixture-weight order with `grey_raw` as their lightness.
std::vector<ColorField> colorize_topk(VaeModel& vae, MdnModel& mdn, const Tensor& grey_raw,
                                      int k);

// Evaluates the full path over the manifest's test split: the top mode
// scores the error columns, all k modes feed best-of and variance.
EvalReport evaluate(VaeModel& vae, MdnModel& mdn, const AbHistogram& hist,
                    const CorpusManifest& manifest, const std::vector<ColorField>& fields,
                    int k);

}  // namespace chroma
