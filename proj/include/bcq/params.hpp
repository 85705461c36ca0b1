#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "bcq/errors.hpp"
#include "bcq/tensor.hpp"

namespace bcq {

// Named parameter tensors in insertion order. Entries have stable addresses
// so modules can hold references across later insertions.
//
// Partial freezing works at element granularity: the first trainable_prefix
// elements of an entry receive optimizer updates, the rest stay untouched.
// A fully frozen tensor has prefix 0.
template <typename T>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        int64_t trainable_prefix = 0;
    };

    Tensor<T>& add(const std::string& name, Tensor<T> init, bool trainable = true) {
        if (index_.count(name)) throw LookupError("duplicate parameter: " + name);
        auto e = std::make_unique<Entry>();
        e->name = name;
        e->value = std::move(init);
        e->trainable_prefix = trainable ? e->value.numel() : 0;
        Entry* raw = e.get();
        index_[name] = entries_.size();
        entries_.push_back(std::move(e));
        return raw->value;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Entry& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw LookupError("no parameter named " + name);
        return *entries_[it->second];
    }

    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw LookupError("no parameter named " + name);
        return *entries_[it->second];
    }

    Tensor<T>& operator[](const std::string& name) { return entry(name).value; }
    const Tensor<T>& operator[](const std::string& name) const { return entry(name).value; }

    size_t size() const { return entries_.size(); }
    Entry& at(size_t i) { return *entries_[i]; }
    const Entry& at(size_t i) const { return *entries_[i]; }

    int64_t total_elements(const std::string& prefix = "") const {
        int64_t n = 0;
        for (const auto& e : entries_)
            if (prefix.empty() || e->name.rfind(prefix, 0) == 0) n += e->value.numel();
        return n;
    }

    int64_t trainable_elements() const {
        int64_t n = 0;
        for (const auto& e : entries_) n += e->trainable_prefix;
        return n;
    }

    void freeze_all() {
        for (auto& e : entries_) e->trainable_prefix = 0;
    }

    void unfreeze_all() {
        for (auto& e : entries_) e->trainable_prefix = e->value.numel();
    }

    void freeze_prefix(const std::string& prefix) {
        for (auto& e : entries_)
            if (e->name.rfind(prefix, 0) == 0) e->trainable_prefix = 0;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e->name);
        return out;
    }

    // deep copy, keeping names, values and freeze state
    ParamStore clone() const {
        ParamStore out;
        for (const auto& e : entries_) {
            out.add(e->name, e->value);
            out.entry(e->name).trainable_prefix = e->trainable_prefix;
        }
        return out;
    }

  private:
    std::vector<std::unique_ptr<Entry>> entries_;
    std::unordered_map<std::string, size_t> index_;
};

} // namespace bcq
