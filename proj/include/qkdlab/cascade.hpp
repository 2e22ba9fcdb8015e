#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "qkdlab/bitvec.hpp"
#include "qkdlab/pamp.hpp"
#include "qkdlab/rng.hpp"

// Iterated block-parity reconciliation. The reference side discloses block
// parities; the noisy side bisects mismatched blocks and flips the located
// bit. A correction in a later pass re-opens the blocks of earlier passes
// that contain the flipped bit. Every disclosed parity is counted, plus the
// final verification hash, and the total is charged as leakage.

namespace qkdlab::cascade {

struct Options {
    double design_error_rate = 0.05;  // sizes the first-pass blocks
    int passes = 4;
    int verify_bits = 64;
    uint64_t shuffle_seed = 1;
};

struct Result {
    BitVec corrected;        // noisy side after reconciliation
    int64_t disclosed_bits;  // parities + verification hash
    int64_t corrections;
    bool verified;           // verification hashes matched
    std::string descriptor;  // public description of the function used
};

namespace detail {

struct Pass {
    std::vector<int64_t> order;           // permuted index order
    std::vector<int64_t> block_start;     // offsets into `order`, plus end sentinel
    std::vector<int64_t> pos_of_index;    // index -> position in `order`
};

inline int64_t first_block_size(double q, int64_t n) {
    double eff = std::max(q, 0.01);
    auto k = static_cast<int64_t>(std::ceil(0.73 / eff));
    return std::clamp<int64_t>(k, 4, std::max<int64_t>(4, n));
}

}  // namespace detail

inline Result reconcile(const BitVec& reference, const BitVec& noisy, const Options& opt) {
    if (reference.size() != noisy.size())
        throw std::invalid_argument("cascade::reconcile: length mismatch");
    const int64_t n = static_cast<int64_t>(reference.size());
    Result res;
    res.corrected = noisy;
    res.disclosed_bits = 0;
    res.corrections = 0;

    if (n == 0) {
        res.verified = true;
        res.descriptor = "cascade(empty)";
        return res;
    }

    // diff = reference ^ corrected; block parity queries on diff correspond
    // one-to-one with reference-side parity announcements.
    BitVec diff = reference ^ res.corrected;

    std::vector<detail::Pass> passes;
    std::vector<std::vector<int>> block_parity;  // running parity of diff per block
    int64_t k = detail::first_block_size(opt.design_error_rate, n);

    auto block_of = [&](int pass, int64_t index) {
        int64_t pos = passes[pass].pos_of_index[index];
        const auto& starts = passes[pass].block_start;
        auto it = std::upper_bound(starts.begin(), starts.end(), pos);
        return static_cast<int64_t>(it - starts.begin()) - 1;
    };

    // Bisect an odd block: each level disclosed one sub-block parity.
    auto bisect = [&](int pass, int64_t block) {
        const auto& p = passes[pass];
        int64_t lo = p.block_start[block], hi = p.block_start[block + 1];
        while (hi - lo > 1) {
            int64_t mid = lo + (hi - lo + 1) / 2;
            int par = 0;
            for (int64_t i = lo; i < mid; ++i) par ^= diff.get(p.order[i]);
            ++res.disclosed_bits;
            if (par)
                hi = mid;
            else
                lo = mid;
        }
        return p.order[lo];
    };

    std::deque<std::pair<int, int64_t>> odd;  // (pass, block)

    for (int pass = 0; pass < opt.passes; ++pass) {
        detail::Pass p;
        p.order.resize(n);
        std::iota(p.order.begin(), p.order.end(), 0);
        if (pass > 0) {
            Rng rng(sub_seed(opt.shuffle_seed, static_cast<uint64_t>(pass)));
            for (int64_t i = n - 1; i > 0; --i)
                std::swap(p.order[i], p.order[rng.below(static_cast<uint64_t>(i + 1))]);
        }
        p.pos_of_index.resize(n);
        for (int64_t i = 0; i < n; ++i) p.pos_of_index[p.order[i]] = i;
        int64_t bs = std::min<int64_t>(k << pass, n);
        for (int64_t s = 0; s < n; s += bs) p.block_start.push_back(s);
        p.block_start.push_back(n);
        passes.push_back(std::move(p));

        auto& parities = block_parity.emplace_back();
        const auto& cur = passes.back();
        int64_t nblocks = static_cast<int64_t>(cur.block_start.size()) - 1;
        parities.resize(nblocks);
        for (int64_t b = 0; b < nblocks; ++b) {
            int par = 0;
            for (int64_t i = cur.block_start[b]; i < cur.block_start[b + 1]; ++i)
                par ^= diff.get(cur.order[i]);
            ++res.disclosed_bits;
            parities[b] = par;
            if (par) odd.emplace_back(pass, b);
        }

        while (!odd.empty()) {
            auto [qp, qb] = odd.front();
            odd.pop_front();
            if (!block_parity[qp][qb]) continue;  // already settled by a cascaded fix
            int64_t bad = bisect(qp, qb);
            diff.flip(bad);
            res.corrected.flip(bad);
            ++res.corrections;
            for (int fp = 0; fp <= pass; ++fp) {
                int64_t fb = block_of(fp, bad);
                block_parity[fp][fb] ^= 1;
                if (block_parity[fp][fb]) odd.emplace_back(fp, fb);
            }
        }
    }

    // Verification: both sides hash their strings with a public seed; the
    // reference side announces its hash.
    int64_t vb = std::min<int64_t>(opt.verify_bits, n);
    Rng vrng(sub_seed(opt.shuffle_seed, 0x7E1FULL));
    pamp::HashSeed vseed = pamp::HashSeed::random(reference.size(), static_cast<size_t>(vb), vrng);
    BitVec href = pamp::toeplitz_hash(reference, vseed, static_cast<size_t>(vb));
    BitVec hcor = pamp::toeplitz_hash(res.corrected, vseed, static_cast<size_t>(vb));
    res.disclosed_bits += vb;
    res.verified = (href == hcor);
    res.descriptor = "cascade(k1=" + std::to_string(k) + ",passes=" + std::to_string(opt.passes) +
                     ",shuffle=" + std::to_string(opt.shuffle_seed) + ",verify=" + std::to_string(vb) + ")";
    return res;
}

}  // namespace qkdlab::cascade
