#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedface/data.hpp"
#include "fedface/losses.hpp"
#include "fedface/numerics.hpp"

namespace fedface {

// Feature extractor plus a class embedding matrix whose row k belongs to
// identity class_ids[k].
struct Model {
  EmbeddingNet net;
  Matrix class_embeddings;
  std::vector<std::uint32_t> class_ids;

  // Row of `identity`, or throws ConfigError.
  std::size_t row_of(std::uint32_t identity) const;

  friend bool operator==(const Model&, const Model&) = default;
};

// Momentum SGD: v <- mu v + g; p <- p - lr v. Velocity starts at zero on
// every call.
struct SgdConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t epochs = 1;
  std::size_t batch_size = 0;  // 0 = full batch
  bool train_class_embeddings = true;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
};

// Per-sample loss on the normalized instance embedding u of a sample whose
// class row is `row`.
using SampleLoss =
    std::function<MatrixLoss(std::span<const double> u, std::size_t row, const Matrix& w)>;

struct TrainStats {
  double mean_loss = 0.0;  // mean per-sample loss over the last epoch
  std::size_t steps = 0;
};

// Trains model.net and (optionally) model.class_embeddings on every sample of
// `datasets`; each dataset's identity selects its class row. Rows touched by a
// step are renormalized afterwards; untouched rows keep their exact bits.
// Throws NonFiniteError if a batch loss is not finite.
TrainStats train_sgd(Model& model, std::span<const ClientDataset> datasets, const SampleLoss& loss,
                     const SgdConfig& cfg);

TrainStats train_am_softmax(Model& model, std::span<const ClientDataset> datasets,
                            const AmSoftmaxConfig& am, const SgdConfig& cfg);

TrainStats train_full_loss(Model& model, std::span<const ClientDataset> datasets,
                           const FullLossConfig& full, const SgdConfig& cfg);

TrainStats train_positive_only(Model& model, std::span<const ClientDataset> datasets,
                               const PosLossConfig& pos, const SgdConfig& cfg);

// Normalized mean of the normalized embeddings of each dataset; one row per
// dataset, in order.
Matrix mean_feature_rows(const EmbeddingNet& net, std::span<const ClientDataset> datasets);

}  // namespace fedface
