#include "chroma/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <memory>

#include "chroma/error.hpp"

namespace chroma {

namespace {

constexpr char kMagic[4] = {'D', 'I', 'V', 'C'};
constexpr char kTrailer[4] = {'C', 'V', 'I', 'D'};

class Writer {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const char* data, std::size_t n) {
        bytes_.insert(bytes_.end(), data, data + n);
    }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.ndim()));
        for (int axis = 0; axis < t.ndim(); ++axis)
            u32(static_cast<std::uint32_t>(t.extent(axis)));
        for (std::int64_t i = 0; i < t.size(); ++i) f64(t[i]);
    }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32() {
        const std::uint8_t* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const std::uint8_t* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const std::uint32_t n = u32();
        const std::uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }
    Tensor tensor() {
        const std::uint32_t ndim = u32();
        if (ndim > 8) corrupt("implausible tensor rank " + std::to_string(ndim));
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < ndim; ++i) {
            const std::uint32_t extent = u32();
            if (extent == 0 || extent > (1u << 28)) corrupt("implausible tensor extent");
            shape.push_back(static_cast<int>(extent));
        }
        Tensor t(shape);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = f64();
        return t;
    }
    void expect(const char magic[4], const char* what) {
        const std::uint8_t* p = take(4);
        if (std::memcmp(p, magic, 4) != 0)
            corrupt(std::string("bad ") + what + " magic");
    }
    std::size_t offset() const { return offset_; }
    bool exhausted() const { return offset_ == bytes_.size(); }
    [[noreturn]] void corrupt(const std::string& why) {
        throw DataError(path_ + ": " + why + " at offset " + std::to_string(offset_));
    }

private:
    const std::uint8_t* take(std::size_t n) {
        if (offset_ + n > bytes_.size())
            throw DataError(path_ + ": checkpoint truncated at offset " +
                            std::to_string(bytes_.size()) + " (needed " +
                            std::to_string(offset_ + n) + " bytes)");
        const std::uint8_t* p = bytes_.data() + offset_;
        offset_ += n;
        return p;
    }

    std::vector<std::uint8_t> bytes_;
    std::string path_;
    std::size_t offset_ = 0;
};

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(ckpt.kind);
    w.str(ckpt.config_json);
    w.u64(ckpt.seed);
    w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, tensor] : ckpt.tensors) {
        w.str(name);
        w.tensor(tensor);
    }
    w.u8(ckpt.basis.has_value() ? 1 : 0);
    if (ckpt.basis) {
        w.tensor(ckpt.basis->mean);
        w.tensor(ckpt.basis->components);
        w.tensor(ckpt.basis->sigmas);
    }
    w.u8(ckpt.hist.has_value() ? 1 : 0);
    if (ckpt.hist) {
        w.f64(ckpt.hist->bin_size);
        w.u32(static_cast<std::uint32_t>(ckpt.hist->bins));
        w.f64(ckpt.hist->floor);
        w.f64(ckpt.hist->weight_norm);
        w.tensor(ckpt.hist->probs);
    }
    w.raw(kTrailer, 4);

    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw DataError("cannot write checkpoint " + path);
    if (std::fwrite(w.bytes().data(), 1, w.bytes().size(), f.get()) != w.bytes().size())
        throw DataError(path + ": short checkpoint write");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw DataError("cannot open checkpoint " + path);
    std::fseek(f.get(), 0, SEEK_END);
    const long length = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(length));
    if (std::fread(bytes.data(), 1, bytes.size(), f.get()) != bytes.size())
        throw DataError(path + ": unreadable checkpoint");

    Reader r(std::move(bytes), path);
    r.expect(kMagic, "leading");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw DataError(path + ": checkpoint version " + std::to_string(version) +
                        ", this build reads version " + std::to_string(kCheckpointVersion));
    Checkpoint ckpt;
    ckpt.kind = r.str();
    if (ckpt.kind != "vae" && ckpt.kind != "cvae" && ckpt.kind != "mdn")
        r.corrupt("unknown model kind '" + ckpt.kind + "'");
    ckpt.config_json = r.str();
    ckpt.seed = r.u64();
    const std::uint32_t n_tensors = r.u32();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = r.str();
        Tensor t = r.tensor();
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    if (r.u8()) {
        PcaBasis basis;
        basis.mean = r.tensor();
        basis.components = r.tensor();
        basis.sigmas = r.tensor();
        ckpt.basis = std::move(basis);
    }
    if (r.u8()) {
        AbHistogram hist;
        hist.bin_size = r.f64();
        hist.bins = static_cast<int>(r.u32());
        hist.floor = r.f64();
        hist.weight_norm = r.f64();
        hist.probs = r.tensor();
        ckpt.hist = std::move(hist);
    }
    r.expect(kTrailer, "trailing");
    if (!r.exhausted()) r.corrupt("trailing garbage");
    return ckpt;
}

}  // namespace chroma
