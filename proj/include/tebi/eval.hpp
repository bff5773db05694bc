#pragma once

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "tebi/tensor.hpp"

namespace tebi {

// Percentage of rows whose target class is among the k largest logits.
// Ties rank the lower class index first.
inline double topk_accuracy(const Tensor& logits, const std::vector<int>& targets, int k) {
  if (static_cast<int>(targets.size()) != logits.rows)
    throw std::invalid_argument("topk_accuracy: need one target per row");
  if (k < 1 || k > logits.cols)
    throw std::invalid_argument("topk_accuracy: k=" + std::to_string(k) +
                                " out of range [1," + std::to_string(logits.cols) + "]");
  int hits = 0;
  for (int i = 0; i < logits.rows; ++i) {
    int t = targets[i];
    if (t < 0 || t >= logits.cols)
      throw std::invalid_argument("topk_accuracy: target " + std::to_string(t) +
                                  " out of range [0," + std::to_string(logits.cols) + ")");
    int rank = 0;
    for (int j = 0; j < logits.cols; ++j) {
      if (logits.at(i, j) > logits.at(i, t) || (logits.at(i, j) == logits.at(i, t) && j < t))
        ++rank;
    }
    if (rank < k) ++hits;
  }
  return 100.0 * hits / std::max(1, logits.rows);
}

// In-batch retrieval: percentage of rows whose diagonal entry is among the
// row's k largest. Same tie rule as topk_accuracy.
inline double retrieval_accuracy(const Tensor& similarity, int k) {
  if (similarity.rows != similarity.cols)
    throw std::invalid_argument("retrieval_accuracy: matrix must be square, got " +
                                similarity.shape_str());
  if (k < 1 || k > similarity.cols)
    throw std::invalid_argument("retrieval_accuracy: k out of range");
  int hits = 0;
  for (int i = 0; i < similarity.rows; ++i) {
    int rank = 0;
    for (int j = 0; j < similarity.cols; ++j) {
      if (similarity.at(i, j) > similarity.at(i, i) ||
          (similarity.at(i, j) == similarity.at(i, i) && j < i))
        ++rank;
    }
    if (rank < k) ++hits;
  }
  return 100.0 * hits / std::max(1, similarity.rows);
}

// Deterministic stand-in for the judged 0-5 similarity: Jaccard overlap of
// the keyword sets scaled to [0,5].
inline double keyword_score(const std::set<std::string>& predicted,
                            const std::set<std::string>& truth) {
  if (truth.empty()) throw std::invalid_argument("keyword_score: truth set must be nonempty");
  if (predicted.empty()) return 0.0;
  int inter = 0;
  for (const auto& w : predicted) inter += truth.count(w) ? 1 : 0;
  int uni = static_cast<int>(predicted.size() + truth.size()) - inter;
  return 5.0 * inter / uni;
}

}  // namespace tebi
