#include "bcq/archive.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace bcq {

namespace {

template <typename T>
std::vector<uint8_t> to_bytes(const Tensor<T>& t) {
    std::vector<uint8_t> raw(t.v.size() * sizeof(T));
    std::memcpy(raw.data(), t.v.data(), raw.size());
    return raw;
}

template <typename T>
Tensor<T> from_bytes(const TensorArchive::Entry& e, const std::string& name) {
    int64_t n = Tensor<T>::count(e.shape);
    if (e.raw.size() != static_cast<size_t>(n) * sizeof(T))
        throw ArchiveError("payload size mismatch for " + name);
    Tensor<T> t;
    t.shape = e.shape;
    t.v.resize(static_cast<size_t>(n));
    std::memcpy(t.v.data(), e.raw.data(), e.raw.size());
    return t;
}

void put_u32(std::vector<uint8_t>& out, uint32_t x) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(x >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t x) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(x >> (8 * i)));
}

uint32_t read_u32(const uint8_t* p) {
    uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<uint32_t>(p[i]) << (8 * i);
    return x;
}

uint64_t read_u64(const uint8_t* p) {
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(p[i]) << (8 * i);
    return x;
}

} // namespace

void TensorArchive::put_f32(const std::string& name, const Tensor<float>& t) {
    entries_[name] = Entry{"f32", t.shape, to_bytes(t)};
}

void TensorArchive::put_f64(const std::string& name, const Tensor<double>& t) {
    entries_[name] = Entry{"f64", t.shape, to_bytes(t)};
}

const TensorArchive::Entry& TensorArchive::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw LookupError("archive has no tensor named " + name);
    return it->second;
}

Tensor<float> TensorArchive::get_f32(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != "f32") throw ArchiveError("tensor " + name + " has dtype " + e.dtype);
    return from_bytes<float>(e, name);
}

Tensor<double> TensorArchive::get_f64(const std::string& name) const {
    const Entry& e = entry(name);
    if (e.dtype != "f64") throw ArchiveError("tensor " + name + " has dtype " + e.dtype);
    return from_bytes<double>(e, name);
}

std::vector<std::string> TensorArchive::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

std::vector<uint8_t> TensorArchive::serialize() const {
    nlohmann::ordered_json manifest;
    manifest["tensors"] = nlohmann::ordered_json::array();
    uint64_t offset = 0;
    for (const auto& [name, e] : entries_) { // std::map iterates sorted by name
        nlohmann::ordered_json j;
        j["name"] = name;
        j["dtype"] = e.dtype;
        j["shape"] = e.shape;
        j["offset"] = offset;
        j["nbytes"] = e.raw.size();
        manifest["tensors"].push_back(std::move(j));
        offset += e.raw.size();
    }
    std::string mstr = manifest.dump();
    std::vector<uint8_t> out;
    out.reserve(16 + mstr.size() + offset);
    out.push_back('B');
    out.push_back('C');
    out.push_back('Q');
    out.push_back('T');
    put_u32(out, kVersion);
    put_u64(out, mstr.size());
    out.insert(out.end(), mstr.begin(), mstr.end());
    for (const auto& [name, e] : entries_) out.insert(out.end(), e.raw.begin(), e.raw.end());
    return out;
}

TensorArchive TensorArchive::deserialize(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 16) throw ArchiveError("file too small");
    if (std::memcmp(bytes.data(), "BCQT", 4) != 0) throw ArchiveError("bad magic");
    uint32_t version = read_u32(bytes.data() + 4);
    if (version != kVersion)
        throw ArchiveError("unsupported version " + std::to_string(version));
    uint64_t mlen = read_u64(bytes.data() + 8);
    if (16 + mlen > bytes.size()) throw ArchiveError("manifest extends past end of file");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + mlen);
    } catch (const nlohmann::json::exception& e) {
        throw ArchiveError(std::string("manifest parse failed: ") + e.what());
    }
    if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
        throw ArchiveError("manifest missing tensors array");
    TensorArchive a;
    size_t payload_start = 16 + mlen;
    for (const auto& j : manifest["tensors"]) {
        if (!j.contains("name") || !j.contains("dtype") || !j.contains("shape") ||
            !j.contains("offset") || !j.contains("nbytes"))
            throw ArchiveError("manifest entry missing fields");
        std::string name = j["name"].get<std::string>();
        Entry e;
        e.dtype = j["dtype"].get<std::string>();
        if (e.dtype != "f32" && e.dtype != "f64")
            throw ArchiveError("tensor " + name + " has unknown dtype " + e.dtype);
        e.shape = j["shape"].get<std::vector<int64_t>>();
        uint64_t off = j["offset"].get<uint64_t>();
        uint64_t nb = j["nbytes"].get<uint64_t>();
        size_t elem = e.dtype == "f32" ? 4 : 8;
        if (static_cast<uint64_t>(Tensor<float>::count(e.shape)) * elem != nb)
            throw ArchiveError("tensor " + name + " shape does not match nbytes");
        if (payload_start + off + nb > bytes.size())
            throw ArchiveError("tensor " + name + " payload extends past end of file");
        e.raw.assign(bytes.begin() + payload_start + off,
                     bytes.begin() + payload_start + off + nb);
        if (a.entries_.count(name)) throw ArchiveError("duplicate tensor " + name);
        a.entries_[name] = std::move(e);
    }
    return a;
}

void TensorArchive::save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ArchiveError("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ArchiveError("write failed: " + path);
}

TensorArchive TensorArchive::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ArchiveError("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

} // namespace bcq
