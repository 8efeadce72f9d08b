#pragma once

#include "orthus/rng.hpp"
#include "orthus/tensor.hpp"

#include <unordered_map>

namespace orthus {

// Named parameter table with stable iteration order (insertion order). The
// order is load-bearing: optimizer updates, checkpoint layout and freeze
// hashes all walk entries in this order.
template <class S>
class ParamStore {
  public:
    struct Entry {
        std::string name;
        MatrixX<S> value;
        bool trainable = true;
    };

    MatrixX<S>& add(const std::string& name, MatrixX<S> value, bool trainable = true) {
        if (index_.count(name)) fail("duplicate parameter \"", name, '"');
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(value), trainable});
        return entries_.back().value;
    }

    MatrixX<S>& add_gaussian(const std::string& name, Index rows, Index cols, Rng& rng, double stddev,
                             bool trainable = true) {
        MatrixX<S> m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = S(rng.gaussian(Stream::Init) * stddev);
        return add(name, std::move(m), trainable);
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    MatrixX<S>& at(const std::string& name) { return entry(name).value; }
    const MatrixX<S>& at(const std::string& name) const { return entry(name).value; }

    bool trainable(const std::string& name) const { return entry(name).trainable; }
    void set_trainable(const std::string& name, bool t) { entry(name).trainable = t; }

    void set_trainable_by_prefix(const std::string& prefix, bool t) {
        bool hit = false;
        for (auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) {
                e.trainable = t;
                hit = true;
            }
        if (!hit) fail("no parameters with prefix \"", prefix, '"');
    }

    std::vector<std::string> names_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) out.push_back(e.name);
        return out;
    }

    // Byte hash of every parameter whose name starts with prefix; "" hashes all.
    uint64_t hash_group(const std::string& prefix = "") const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (const auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) {
                h = fnv1a({reinterpret_cast<const unsigned char*>(e.name.data()), e.name.size()}, h);
                h = hash_matrix(e.value, h);
            }
        return h;
    }

    size_t size() const { return entries_.size(); }
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }

    Index total_scalars() const {
        Index n = 0;
        for (const auto& e : entries_) n += e.value.size();
        return n;
    }

  private:
    Entry& entry(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) fail("unknown parameter \"", name, '"');
        return entries_[it->second];
    }
    const Entry& entry(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) fail("unknown parameter \"", name, '"');
        return entries_[it->second];
    }

    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace orthus
