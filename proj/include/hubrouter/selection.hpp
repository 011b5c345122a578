#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace hubrouter {

// Council membership: sorted, distinct original positions plus each
// member's own score.
struct SelectionSet {
  std::vector<std::size_t> indices;
  std::vector<double> scores;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  bool contains(std::size_t position) const;
};

// The `count` highest scores, ties going to the lower index, returned in
// rank order (best first).
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t count);

// Top k/2 winners plus each winner's right neighbour j+1 (dropped when
// j+1 == n), deduplicated and sorted. |result| <= k. k must be even and >= 2.
SelectionSet select_topk_with_neighbors(std::span<const double> scores, std::size_t k);

// Prefix-only variant for causal routing. Scanning left to right, position i
// wins when scores[i] > threshold and fewer than k/2 winners precede it;
// winners add their right neighbour as above. Whether i is a member depends
// on scores[0..i] only.
SelectionSet select_causal_threshold(std::span<const double> scores, std::size_t k, double threshold = 0.0);

}  // namespace hubrouter
