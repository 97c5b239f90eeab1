#include "chroma/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "chroma/error.hpp"
#include "chroma/image_io.hpp"
#include "chroma/rng.hpp"

namespace fs = std::filesystem;

namespace chroma {

namespace {

constexpr char kCacheMagic[4] = {'C', 'F', 'L', 'D'};
constexpr const char* kCacheDir = ".chroma-cache";

std::uint64_t fnv1a64(const std::vector<unsigned char>& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    return h;
}

std::vector<unsigned char> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const std::string s = buffer.str();
    return std::vector<unsigned char>(s.begin(), s.end());
}

fs::path cache_file(const fs::path& root, std::uint64_t hash, int field_size) {
    char name[64];
    std::snprintf(name, sizeof name, "%016llx-%d.field",
                  static_cast<unsigned long long>(hash), field_size);
    return root / kCacheDir / name;
}

// Cache entries hold float32 planes; precision is ample for 8-bit sources
// and halves the footprint.
void write_cache(const fs::path& path, const ColorField& field) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) return;  // a cold cache is never fatal
    out.write(kCacheMagic, 4);
    const std::int32_t f = field.L.extent(0);
    out.write(reinterpret_cast<const char*>(&f), 4);
    auto write_plane = [&](const Tensor& t) {
        for (std::int64_t i = 0; i < t.size(); ++i) {
            const float v = static_cast<float>(t[i]);
            out.write(reinterpret_cast<const char*>(&v), 4);
        }
    };
    write_plane(field.L);
    write_plane(field.ab);
}

bool read_cache(const fs::path& path, int field_size, ColorField& field) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    char magic[4];
    std::int32_t f = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&f), 4);
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0 || f != field_size) return false;
    field.L = Tensor({field_size, field_size});
    field.ab = Tensor({2, field_size, field_size});
    auto read_plane = [&](Tensor& t) {
        for (std::int64_t i = 0; i < t.size(); ++i) {
            float v = 0;
            in.read(reinterpret_cast<char*>(&v), 4);
            t[i] = v;
        }
    };
    read_plane(field.L);
    read_plane(field.ab);
    return static_cast<bool>(in);
}

// Serves one file through the cache, decoding on a miss. Returns false
// (after logging) if the file cannot be decoded.
bool materialize(const fs::path& root, const std::string& name, int field_size,
                 ColorField& field, int& decoded, int& cache_hits, std::ostream* log) {
    const fs::path source = root / name;
    std::vector<unsigned char> bytes;
    try {
        bytes = read_file_bytes(source);
    } catch (const DataError& e) {
        if (log) *log << "warning: skipping " << name << ": " << e.what() << '\n';
        return false;
    }
    const fs::path cached = cache_file(root, fnv1a64(bytes), field_size);
    if (read_cache(cached, field_size, field)) {
        ++cache_hits;
        return true;
    }
    try {
        const ImageU8 img = read_image(source.string());
        field = rgb_to_lab(center_crop_resize(img, field_size));
    } catch (const DataError& e) {
        if (log) *log << "warning: skipping " << name << ": " << e.what() << '\n';
        return false;
    }
    ++decoded;
    write_cache(cached, field);
    return true;
}

}  // namespace

void save_manifest(const std::string& path, const CorpusManifest& manifest) {
    nlohmann::json j;
    j["root"] = manifest.root;
    j["field_size"] = manifest.field_size;
    j["split_seed"] = manifest.split_seed;
    j["test_fraction"] = manifest.test_fraction;
    j["files"] = manifest.files;
    j["split"] = manifest.split;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path);
    out << j.dump(2) << '\n';
}

CorpusManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path);
    nlohmann::json j;
    try {
        in >> j;
        CorpusManifest manifest;
        manifest.root = j.at("root").get<std::string>();
        manifest.field_size = j.at("field_size").get<int>();
        manifest.split_seed = j.at("split_seed").get<std::uint64_t>();
        manifest.test_fraction = j.at("test_fraction").get<double>();
        manifest.files = j.at("files").get<std::vector<std::string>>();
        manifest.split = j.at("split").get<std::vector<int>>();
        if (manifest.files.size() != manifest.split.size())
            throw DataError(path + ": files and split lists differ in length");
        for (int s : manifest.split)
            if (s != 0 && s != 1) throw DataError(path + ": split entries must be 0 or 1");
        if (manifest.field_size < 1) throw DataError(path + ": bad field_size");
        return manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed manifest: " + e.what());
    }
}

IngestResult ingest(const std::string& dir, int field_size, std::uint64_t split_seed,
                    double test_fraction, std::ostream* log) {
    if (field_size < 1) throw UsageError("ingest: field_size must be positive");
    if (test_fraction < 0.0 || test_fraction > 1.0)
        throw UsageError("ingest: test_fraction must lie in [0, 1]");
    if (!fs::is_directory(dir)) throw DataError("ingest: " + dir + " is not a directory");

    std::vector<std::string> names;
    for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        if (name.empty() || name[0] == '.') continue;  // hidden files and the cache
        names.push_back(name);
    }
    std::sort(names.begin(), names.end());

    IngestResult result;
    result.manifest.root = dir;
    result.manifest.field_size = field_size;
    result.manifest.split_seed = split_seed;
    result.manifest.test_fraction = test_fraction;
    for (const std::string& name : names) {
        ColorField field;
        if (materialize(dir, name, field_size, field, result.decoded, result.cache_hits, log)) {
            result.manifest.files.push_back(name);
            result.fields.push_back(std::move(field));
        } else {
            ++result.skipped;
        }
    }
    if (result.fields.empty()) throw DataError("ingest: no decodable images in " + dir);

    const int n = static_cast<int>(result.fields.size());
    const int n_test = static_cast<int>(std::llround(n * test_fraction));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(split_seed);
    rng.shuffle(order);
    result.manifest.split.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n_test; ++i)
        result.manifest.split[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1;
    return result;
}

std::vector<ColorField> load_corpus(const CorpusManifest& manifest, std::ostream* log) {
    std::vector<ColorField> fields;
    int decoded = 0, cache_hits = 0;
    for (const std::string& name : manifest.files) {
        ColorField field;
        if (!materialize(manifest.root, name, manifest.field_size, field, decoded, cache_hits,
                         log))
            throw DataError("load_corpus: cannot materialize " + name + " under " +
                            manifest.root);
        fields.push_back(std::move(field));
    }
    return fields;
}

std::vector<ColorField> split_fields(const CorpusManifest& manifest,
                                     const std::vector<ColorField>& fields, int side) {
    if (manifest.split.size() != fields.size())
        throw ShapeError("split_fields: manifest lists " + std::to_string(manifest.split.size()) +
                         " files but " + std::to_string(fields.size()) + " fields were given");
    std::vector<ColorField> out;
    for (std::size_t i = 0; i < fields.size(); ++i)
        if (manifest.split[i] == side) out.push_back(fields[i]);
    return out;
}

}  // namespace chroma
