#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

namespace spanret {

struct ScoredHit {
    std::string passage_id;
    double score = 0.0;

    bool operator==(const ScoredHit&) const = default;
};

/// Higher score first; equal scores by ascending passage id.
[[nodiscard]] inline bool ranks_before(const ScoredHit& a, const ScoredHit& b)
{
    if (a.score != b.score) {
        return a.score > b.score;
    }
    return a.passage_id < b.passage_id;
}

/// Keeps the best k hits under ranks_before, sorted.
inline void keep_top_k(std::vector<ScoredHit>& hits, std::size_t k)
{
    if (hits.size() > k) {
        std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), ranks_before);
        hits.resize(k);
    } else {
        std::sort(hits.begin(), hits.end(), ranks_before);
    }
}

} // namespace spanret
