#pragma once

#include <bit>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "qkdlab/rng.hpp"

namespace qkdlab {

// Packed bit string. Bit 0 is the leftmost character of the string form.
class BitVec {
  public:
    BitVec() = default;
    explicit BitVec(size_t n) : size_(n), words_((n + 63) / 64, 0) {}

    static BitVec from_string(const std::string& s) {
        BitVec v(s.size());
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '1') {
                v.set(i, 1);
            } else if (s[i] != '0') {
                throw std::invalid_argument("BitVec::from_string: expected only 0/1");
            }
        }
        return v;
    }

    static BitVec random(size_t n, Rng& rng) {
        BitVec v(n);
        for (auto& w : v.words_) w = rng.next_u64();
        v.mask_tail();
        return v;
    }

    size_t size() const { return size_; }
    bool empty() const { return size_ == 0; }

    int get(size_t i) const { return static_cast<int>((words_[i >> 6] >> (i & 63)) & 1); }

    void set(size_t i, int b) {
        uint64_t mask = 1ULL << (i & 63);
        if (b)
            words_[i >> 6] |= mask;
        else
            words_[i >> 6] &= ~mask;
    }

    void flip(size_t i) { words_[i >> 6] ^= 1ULL << (i & 63); }

    void push_back(int b) {
        if ((size_ & 63) == 0) words_.push_back(0);
        if (b) words_.back() |= 1ULL << (size_ & 63);
        ++size_;
    }

    void append(const BitVec& other) {
        for (size_t i = 0; i < other.size_; ++i) push_back(other.get(i));
    }

    // 64 bits starting at `pos` (little-endian in bit index); out-of-range bits are 0
    uint64_t extract_u64(size_t pos) const {
        size_t w = pos >> 6, off = pos & 63;
        uint64_t lo = w < words_.size() ? words_[w] : 0;
        if (off == 0) return lo;
        uint64_t hi = (w + 1) < words_.size() ? words_[w + 1] : 0;
        return (lo >> off) | (hi << (64 - off));
    }

    size_t popcount() const {
        size_t c = 0;
        for (uint64_t w : words_) c += static_cast<size_t>(std::popcount(w));
        return c;
    }

    int parity() const { return static_cast<int>(popcount() & 1); }

    BitVec operator^(const BitVec& o) const {
        if (size_ != o.size_) throw std::invalid_argument("BitVec xor: size mismatch");
        BitVec r(size_);
        for (size_t i = 0; i < words_.size(); ++i) r.words_[i] = words_[i] ^ o.words_[i];
        return r;
    }

    bool operator==(const BitVec& o) const { return size_ == o.size_ && words_ == o.words_; }
    bool operator!=(const BitVec& o) const { return !(*this == o); }

    std::string to_string() const {
        std::string s(size_, '0');
        for (size_t i = 0; i < size_; ++i)
            if (get(i)) s[i] = '1';
        return s;
    }

    const std::vector<uint64_t>& words() const { return words_; }

  private:
    void mask_tail() {
        if (size_ & 63) words_.back() &= (1ULL << (size_ & 63)) - 1;
    }

    size_t size_ = 0;
    std::vector<uint64_t> words_;
};

}  // namespace qkdlab
