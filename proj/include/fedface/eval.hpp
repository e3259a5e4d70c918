#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "fedface/data.hpp"
#include "fedface/numerics.hpp"

namespace fedface {

struct ScoredPair {
  double score = 0.0;
  bool genuine = false;
};

// Cosine similarity of the l2-normalized embeddings of each pair.
std::vector<ScoredPair> score_pairs(const EmbeddingNet& net, const PairProtocol& protocol);

struct RocPoint {
  double threshold = 0.0;
  double far = 0.0;
  double tar = 0.0;
  std::size_t true_accepts = 0;
  std::size_t false_accepts = 0;
};

struct VerificationReport {
  // One point per candidate threshold, from +inf down to the lowest score.
  std::vector<RocPoint> roc;
  std::map<double, double> tar_at_far;
  double best_threshold = 0.0;
  double accuracy_at_best = 0.0;
  std::size_t num_genuine = 0;
  std::size_t num_impostor = 0;
};

// Exact empirical ROC. A pair is accepted when score >= threshold; the
// candidate thresholds are +inf and every distinct score.
//
// TAR@FAR for a level L is the TAR at the lowest threshold whose empirical
// FAR does not exceed L. The best threshold maximizes accuracy; ties go to
// the larger threshold.
VerificationReport roc_and_tar(std::span<const ScoredPair> scored,
                               std::span<const double> far_levels);

struct SeparationReport {
  double mean_pairwise = 0.0;
  double min_pairwise = 0.0;
  double max_pairwise = 0.0;
  // Mean cosine between each instance embedding and its identity's centroid.
  double mean_within_class = 0.0;
};

// Pairwise statistics over the rows of `class_embeddings` (C >= 2). The
// within-class term is computed from `clients` under `net` and is 0 when no
// clients are given.
SeparationReport separation(const Matrix& class_embeddings, const EmbeddingNet& net,
                            std::span<const ClientDataset> clients);

}  // namespace fedface
