#pragma once

// Ranking relevance and group fairness metrics.
//
// Ranked lists are built by sorting on descending score; equal scores keep
// their original order. Fairness metrics assume a binary protected / other
// split of the population.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fairflow/error.hpp"

namespace fairflow {

struct RankedList {
  std::vector<double> relevance;  // in rank order
  std::vector<int> group;         // in rank order
  int protected_group = 1;

  std::size_t size() const { return relevance.size(); }
};

/// Indices sorted by descending score, ties by ascending original index.
inline std::vector<std::size_t> rank_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

inline RankedList make_ranked_list(std::span<const double> scores, std::span<const double> relevance,
                                   std::span<const int> group, int protected_group) {
  if (scores.size() != relevance.size() || scores.size() != group.size())
    throw ContractError("ranked list: scores, relevance and group sizes differ");
  RankedList list;
  list.protected_group = protected_group;
  for (std::size_t i : rank_order(scores)) {
    list.relevance.push_back(relevance[i]);
    list.group.push_back(group[i]);
  }
  return list;
}

struct NdcgResult {
  double value = 0.0;
  bool no_relevant = false;  // IDCG was zero; value is reported as 0
};

inline double dcg_at_k(std::span<const double> relevance, std::size_t k) {
  double dcg = 0.0;
  const std::size_t n = std::min(k, relevance.size());
  for (std::size_t i = 0; i < n; ++i) dcg += (std::exp2(relevance[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  return dcg;
}

inline NdcgResult ndcg_at_k(const RankedList& list, std::size_t k) {
  if (k < 1) throw ContractError("ndcg: k must be at least 1");
  std::vector<double> ideal = list.relevance;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg_at_k(ideal, k);
  if (idcg == 0.0) return {0.0, true};
  return {dcg_at_k(list.relevance, k) / idcg, false};
}

namespace detail {

inline double rnd_sum(std::span<const int> is_protected) {
  const std::size_t n = is_protected.size();
  double total = 0.0;
  for (int v : is_protected) total += v;
  const double rate = total / static_cast<double>(n);
  double sum = 0.0, prefix = 0.0;
  std::size_t next = 10;
  for (std::size_t i = 1; i <= n; ++i) {
    prefix += is_protected[i - 1];
    if (i == next) {
      sum += std::abs(prefix / static_cast<double>(i) - rate) / std::log2(static_cast<double>(i));
      next += 10;
    }
  }
  return sum;
}

}  // namespace detail

/// Normalized discounted difference over cutoffs 10, 20, ... up to the last
/// full multiple of ten.
inline double rnd(const RankedList& list) {
  const std::size_t n = list.size();
  if (n < 10) throw MetricUndefined("rND needs at least 10 ranked documents, got " + std::to_string(n));
  std::vector<int> prot(n);
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) count += prot[i] = list.group[i] == list.protected_group;
  std::vector<int> worst(n, 0);
  std::fill(worst.end() - static_cast<std::ptrdiff_t>(count), worst.end(), 1);
  const double z = detail::rnd_sum(worst);
  if (z == 0.0) throw MetricUndefined("rND normalizer is zero (protected share fixed at every cutoff)");
  return detail::rnd_sum(prot) / z;
}

namespace detail {

/// Pairs (a, b) with a from `hi` and b from `lo`, counting score_a > score_b
/// as 1 and ties as 0.5. Sort-and-sweep, O((m+n) log(m+n)).
inline double pair_wins(std::vector<double> hi, std::vector<double> lo) {
  std::sort(hi.begin(), hi.end());
  std::sort(lo.begin(), lo.end());
  double wins = 0.0;
  std::size_t below = 0, upto = 0;
  for (double a : hi) {
    while (below < lo.size() && lo[below] < a) ++below;
    upto = std::max(upto, below);
    while (upto < lo.size() && lo[upto] <= a) ++upto;
    wins += static_cast<double>(below) + 0.5 * static_cast<double>(upto - below);
  }
  return wins;
}

}  // namespace detail

struct PairAccuracy {
  double a_over_b = 0.0;  // accuracy on pairs with the more relevant document from group a
  double b_over_a = 0.0;
};

inline PairAccuracy group_pair_accuracy(std::span<const double> scores, std::span<const double> labels,
                                        std::span<const int> groups, int group_a, int group_b) {
  if (scores.size() != labels.size() || scores.size() != groups.size())
    throw ContractError("gpa: scores, labels and groups sizes differ");
  std::vector<double> levels(labels.begin(), labels.end());
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());

  auto direction = [&](int gi, int gj) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t hi = 0; hi < levels.size(); ++hi) {
      std::vector<double> top;
      for (std::size_t i = 0; i < scores.size(); ++i)
        if (groups[i] == gi && labels[i] == levels[hi]) top.push_back(scores[i]);
      if (top.empty()) continue;
      std::vector<double> bottom;
      for (std::size_t i = 0; i < scores.size(); ++i)
        if (groups[i] == gj && labels[i] < levels[hi]) bottom.push_back(scores[i]);
      pairs += static_cast<double>(top.size()) * static_cast<double>(bottom.size());
      wins += detail::pair_wins(std::move(top), std::move(bottom));
    }
    if (pairs == 0.0)
      throw MetricUndefined("gpa: no cross-group pairs with group " + std::to_string(gi) + " more relevant than group " +
                            std::to_string(gj));
    return wins / pairs;
  };
  return {direction(group_a, group_b), direction(group_b, group_a)};
}

/// |A(a > b) - A(b > a)|.
inline double gpa(std::span<const double> scores, std::span<const double> labels, std::span<const int> groups,
                  int group_a = 0, int group_b = 1) {
  auto acc = group_pair_accuracy(scores, labels, groups, group_a, group_b);
  return std::abs(acc.a_over_b - acc.b_over_a);
}

/// |accuracy - majority class rate of truth|.
inline double adrg(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size() || truth.empty())
    throw ContractError("adrg: predictions and truth must be non-empty and equal length");
  std::vector<int> classes(truth.begin(), truth.end());
  std::sort(classes.begin(), classes.end());
  std::size_t best = 0;
  for (auto it = classes.begin(); it != classes.end();) {
    auto end = std::upper_bound(it, classes.end(), *it);
    best = std::max(best, static_cast<std::size_t>(end - it));
    it = end;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += predictions[i] == truth[i];
  const auto n = static_cast<double>(truth.size());
  return std::abs(static_cast<double>(correct) / n - static_cast<double>(best) / n);
}

/// Binary F1 for class `positive`; 0 when there are no true positives.
inline double f1_score(std::span<const int> predictions, std::span<const int> truth, int positive = 1) {
  if (predictions.size() != truth.size()) throw ContractError("f1: size mismatch");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predictions[i] == positive, t = truth[i] == positive;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp == 0) return 0.0;
  return 2 * tp / (2 * tp + fp + fn);
}

/// Mann-Whitney AUC with average ranks for ties.
inline double auc(std::span<const double> scores, std::span<const int> truth, int positive = 1) {
  if (scores.size() != truth.size()) throw ContractError("auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0, npos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (truth[idx[k]] == positive) {
        rank_sum += avg;
        ++npos;
      }
    i = j;
  }
  const double nneg = static_cast<double>(n) - npos;
  if (npos == 0 || nneg == 0) throw MetricUndefined("auc needs both classes present");
  return (rank_sum - npos * (npos + 1) / 2) / (npos * nneg);
}

}  // namespace fairflow
