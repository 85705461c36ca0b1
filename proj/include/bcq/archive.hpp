#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bcq/errors.hpp"
#include "bcq/tensor.hpp"

namespace bcq {

// Container file for named tensors.
//
// Layout: 4-byte magic "BCQT", u32 format version (little endian), u64
// manifest byte length, UTF-8 JSON manifest, then raw little-endian row-major
// payloads back to back. The manifest lists entries sorted by name with
// dtype, shape, payload offset (relative to the end of the manifest) and
// byte count. Writing the same set of tensors always produces identical
// bytes, regardless of insertion order.
class TensorArchive {
  public:
    struct Entry {
        std::string dtype; // "f32" or "f64"
        std::vector<int64_t> shape;
        std::vector<uint8_t> raw;
    };

    static constexpr uint32_t kVersion = 1;

    void put_f32(const std::string& name, const Tensor<float>& t);
    void put_f64(const std::string& name, const Tensor<double>& t);

    Tensor<float> get_f32(const std::string& name) const;
    Tensor<double> get_f64(const std::string& name) const;

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    const Entry& entry(const std::string& name) const;
    size_t size() const { return entries_.size(); }

    // names in sorted order
    std::vector<std::string> names() const;

    std::vector<uint8_t> serialize() const;
    static TensorArchive deserialize(const std::vector<uint8_t>& bytes);

    void save(const std::string& path) const;
    static TensorArchive load(const std::string& path);

  private:
    std::map<std::string, Entry> entries_;
};

} // namespace bcq
