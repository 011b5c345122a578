#include "hubrouter/selection.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "hubrouter/errors.hpp"

namespace hubrouter {
namespace {

void check_k(std::size_t k) {
  if (k < 2 || k % 2 != 0) throw ContractError("selection: top_k must be even and >= 2, got " + std::to_string(k));
}

SelectionSet expand(std::span<const double> scores, std::vector<std::size_t> winners) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> members = winners;
  for (auto j : winners)
    if (j + 1 < n) members.push_back(j + 1);
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());
  SelectionSet out;
  out.indices = std::move(members);
  out.scores.reserve(out.indices.size());
  for (auto i : out.indices) out.scores.push_back(scores[i]);
  return out;
}

}  // namespace

bool SelectionSet::contains(std::size_t position) const {
  return std::binary_search(indices.begin(), indices.end(), position);
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t count) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  count = std::min(count, order.size());
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count), order.end(), better);
  order.resize(count);
  return order;
}

SelectionSet select_topk_with_neighbors(std::span<const double> scores, std::size_t k) {
  check_k(k);
  return expand(scores, topk_indices(scores, k / 2));
}

SelectionSet select_causal_threshold(std::span<const double> scores, std::size_t k, double threshold) {
  check_k(k);
  std::vector<std::size_t> winners;
  for (std::size_t i = 0; i < scores.size() && winners.size() < k / 2; ++i) {
    if (scores[i] > threshold) winners.push_back(i);
  }
  return expand(scores, std::move(winners));
}

}  // namespace hubrouter
