#include "fedface/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fedface {

std::vector<ScoredPair> score_pairs(const EmbeddingNet& net, const PairProtocol& protocol) {
  if (protocol.pairs.empty()) throw ConfigError("score_pairs: empty protocol");
  std::vector<ScoredPair> out;
  out.reserve(protocol.pairs.size());
  for (const auto& p : protocol.pairs) {
    const Vector a = l2_normalize(forward(net, p.a));
    const Vector b = l2_normalize(forward(net, p.b));
    out.push_back({std::clamp(dot(a, b), -1.0, 1.0), p.same_identity});
  }
  return out;
}

VerificationReport roc_and_tar(std::span<const ScoredPair> scored,
                               std::span<const double> far_levels) {
  VerificationReport report;
  for (const auto& s : scored) {
    if (!std::isfinite(s.score)) throw ConfigError("roc_and_tar: non-finite score");
    (s.genuine ? report.num_genuine : report.num_impostor)++;
  }
  if (report.num_genuine == 0 || report.num_impostor == 0) {
    throw ConfigError("roc_and_tar: need both genuine and impostor scores");
  }

  std::vector<ScoredPair> sorted(scored.begin(), scored.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredPair& a, const ScoredPair& b) { return a.score > b.score; });

  const auto g = static_cast<double>(report.num_genuine);
  const auto i = static_cast<double>(report.num_impostor);
  const double total = g + i;

  std::size_t tp = 0;
  std::size_t fp = 0;
  auto record = [&](double threshold) {
    report.roc.push_back(
        {threshold, static_cast<double>(fp) / i, static_cast<double>(tp) / g, tp, fp});
  };

  record(std::numeric_limits<double>::infinity());
  for (std::size_t k = 0; k < sorted.size();) {
    const double t = sorted[k].score;
    for (; k < sorted.size() && sorted[k].score == t; ++k) {
      (sorted[k].genuine ? tp : fp)++;
    }
    record(t);
  }

  report.best_threshold = report.roc.front().threshold;
  report.accuracy_at_best = -1.0;
  for (const auto& pt : report.roc) {
    const auto correct = pt.true_accepts + (report.num_impostor - pt.false_accepts);
    const double acc = static_cast<double>(correct) / total;
    if (acc > report.accuracy_at_best) {
      report.accuracy_at_best = acc;
      report.best_threshold = pt.threshold;
    }
  }

  for (double level : far_levels) {
    double tar = 0.0;
    for (const auto& pt : report.roc) {
      if (pt.far <= level) tar = pt.tar;
    }
    report.tar_at_far[level] = tar;
  }
  return report;
}

SeparationReport separation(const Matrix& class_embeddings, const EmbeddingNet& net,
                            std::span<const ClientDataset> clients) {
  const std::size_t c = class_embeddings.rows();
  if (c < 2) throw NotEnoughClassesError("separation needs at least 2 class embeddings");
  SeparationReport r;
  r.min_pairwise = std::numeric_limits<double>::infinity();
  r.max_pairwise = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a + 1; b < c; ++b) {
      const double s = dot(class_embeddings.row(a), class_embeddings.row(b)) /
                       (norm2(class_embeddings.row(a)) * norm2(class_embeddings.row(b)));
      sum += s;
      r.min_pairwise = std::min(r.min_pairwise, s);
      r.max_pairwise = std::max(r.max_pairwise, s);
      ++pairs;
    }
  }
  r.mean_pairwise = sum / static_cast<double>(pairs);

  double within = 0.0;
  std::size_t count = 0;
  for (const auto& ds : clients) {
    std::vector<Vector> emb;
    emb.reserve(ds.size());
    Vector centroid(net.output_dim(), 0.0);
    for (const auto& s : ds.samples) {
      emb.push_back(l2_normalize(forward(net, s.features)));
      for (std::size_t k = 0; k < centroid.size(); ++k) centroid[k] += emb.back()[k];
    }
    const double cn = norm2(centroid);
    if (!(cn > kNormEpsilon)) continue;
    for (const auto& e : emb) {
      within += dot(e, centroid) / cn;
      ++count;
    }
  }
  r.mean_within_class = count ? within / static_cast<double>(count) : 0.0;
  return r;
}

}  // namespace fedface
