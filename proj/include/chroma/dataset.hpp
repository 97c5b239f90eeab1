// Corpus ingestion: directory scanning, decode + crop + resize + Lab
// conversion, a float32 on-disk cache keyed by content hash, and the
// seeded train/test split recorded in a manifest.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "chroma/colorspace.hpp"

namespace chroma {

struct CorpusManifest {
    std::string root;  // directory the file names are relative to
    int field_size = 16;
    std::uint64_t split_seed = 1;
    double test_fraction = 0.2;
    std::vector<std::string> files;  // sorted by name
    std::vector<int> split;          // 0 = train, 1 = test, parallel to files
};

void save_manifest(const std::string& path, const CorpusManifest& manifest);
CorpusManifest load_manifest(const std::string& path);

struct IngestResult {
    CorpusManifest manifest;
    std::vector<ColorField> fields;  // parallel to manifest.files
    int decoded = 0;                 // images read from their source file
    int cache_hits = 0;              // fields served from the cache
    int skipped = 0;                 // undecodable files passed over
};

// Scans `dir` for PPM/PNG files (sorted by name), converts each to a
// ColorField at `field_size`, and assigns the seeded train/test split.
// Converted fields are cached under dir/.chroma-cache keyed by content
// hash, so an unchanged corpus re-ingests without decoding anything.
// Undecodable files are skipped with a warning on `log`; a directory with
// no usable image is an error.
IngestResult ingest(const std::string& dir, int field_size, std::uint64_t split_seed,
                    double test_fraction, std::ostream* log = nullptr);

// Re-materializes the fields for an existing manifest (through the same
// cache), preserving manifest order.
std::vector<ColorField> load_corpus(const CorpusManifest& manifest, std::ostream* log = nullptr);

// The subset of `fields` assigned to one side of the split.
std::vector<ColorField> split_fields(const CorpusManifest& manifest,
                                     const std::vector<ColorField>& fields, int side);

}  // namespace chroma
