#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "marecg/core/tensor.hpp"

namespace marecg::num {

// Named parameter registry. Holds values, accumulated gradients, and AdamW
// moment buffers; modules keep indices into it and the checkpoint writer
// serializes it by name.
template <class S>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<S> value;
        Tensor<S> grad;
        Tensor<S> moment1;
        Tensor<S> moment2;
    };

    std::size_t add(std::string name, Tensor<S> init) {
        if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        std::size_t id = entries_.size();
        Entry e;
        e.name = std::move(name);
        e.grad = Tensor<S>(init.shape, S(0));
        e.moment1 = Tensor<S>(init.shape, S(0));
        e.moment2 = Tensor<S>(init.shape, S(0));
        e.value = std::move(init);
        index_.emplace(e.name, id);
        entries_.push_back(std::move(e));
        return id;
    }

    Entry& at(std::size_t id) { return entries_.at(id); }
    const Entry& at(std::size_t id) const { return entries_.at(id); }
    std::size_t find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return entries_.size(); }
    std::size_t total_scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) {
            std::fill(e.grad.v.begin(), e.grad.v.end(), S(0));
        }
    }

    // Deep copy of values only (fresh moments); used for the EMA target encoder.
    ParamStore clone_values() const {
        ParamStore out;
        for (const auto& e : entries_) out.add(e.name, e.value);
        return out;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace marecg::num
