#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "error.hpp"
#include "scored_hit.hpp"

namespace spanret {

struct HybridConfig {
    std::size_t k = 100;
    std::size_t k_prime = 1000;
    double alpha = 1.0;

    void validate() const
    {
        if (k == 0 || k > k_prime) {
            throw Error(ErrorKind::invalid_argument, "hybrid: need 1 <= k <= k_prime");
        }
        if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
            throw Error(ErrorKind::invalid_argument, "hybrid: alpha must be a finite non-negative number");
        }
    }
};

namespace detail {

inline double list_minimum(const std::vector<ScoredHit>& hits, const char* which)
{
    std::unordered_set<std::string> seen;
    double lo = 0.0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (!seen.insert(hits[i].passage_id).second) {
            throw Error(ErrorKind::duplicate_id,
                        std::string("hybrid: duplicate passage id in ") + which + " list: " + hits[i].passage_id);
        }
        lo = i == 0 ? hits[i].score : std::min(lo, hits[i].score);
    }
    return lo; // 0 for an empty list
}

} // namespace detail

/// Union of both candidate lists; a candidate missing from one list takes
/// that list's minimum score. Passages in neither list cannot be returned.
[[nodiscard]] inline std::vector<ScoredHit> fuse(const std::vector<ScoredHit>& dense,
                                                 const std::vector<ScoredHit>& sparse, const HybridConfig& config)
{
    config.validate();
    double const dense_floor = detail::list_minimum(dense, "dense");
    double const sparse_floor = detail::list_minimum(sparse, "sparse");

    struct Pair {
        double dense;
        double sparse;
    };
    std::map<std::string, Pair> merged;
    for (auto const& h : dense) {
        merged[h.passage_id] = {h.score, sparse_floor};
    }
    for (auto const& h : sparse) {
        auto [it, inserted] = merged.try_emplace(h.passage_id, Pair{dense_floor, h.score});
        if (!inserted) {
            it->second.sparse = h.score;
        }
    }
    std::vector<ScoredHit> out;
    out.reserve(merged.size());
    for (auto const& [id, s] : merged) {
        out.push_back({id, s.dense + config.alpha * s.sparse});
    }
    keep_top_k(out, config.k);
    return out;
}

} // namespace spanret
