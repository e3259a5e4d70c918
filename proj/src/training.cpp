#include "fedface/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace fedface {

std::size_t Model::row_of(std::uint32_t identity) const {
  const auto it = std::find(class_ids.begin(), class_ids.end(), identity);
  if (it == class_ids.end()) {
    throw ConfigError("model has no class embedding for identity " + std::to_string(identity));
  }
  return static_cast<std::size_t>(it - class_ids.begin());
}

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and nonnegative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

TrainStats train_sgd(Model& model, std::span<const ClientDataset> datasets, const SampleLoss& loss,
                     const SgdConfig& cfg) {
  cfg.validate();
  struct Ref {
    std::size_t ds;
    std::size_t sample;
    std::size_t row;
  };
  std::vector<Ref> refs;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    datasets[d].validate();
    const std::size_t row = model.row_of(datasets[d].identity);
    for (std::size_t s = 0; s < datasets[d].size(); ++s) refs.push_back({d, s, row});
  }
  if (refs.empty()) throw ConfigError("train_sgd: no samples");

  Matrix& w = model.class_embeddings;
  const std::size_t batch =
      (cfg.batch_size == 0 || cfg.batch_size > refs.size()) ? refs.size() : cfg.batch_size;
  Vector vel_theta(model.net.layout().param_count(), 0.0);
  Matrix vel_w(w.rows(), w.cols());
  std::mt19937_64 rng(cfg.shuffle_seed);
  TrainStats stats;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < refs.size()) std::shuffle(refs.begin(), refs.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < refs.size(); start += batch) {
      const std::size_t end = std::min(start + batch, refs.size());
      const double inv = 1.0 / static_cast<double>(end - start);
      Vector grad_theta(vel_theta.size(), 0.0);
      Matrix grad_w(w.rows(), w.cols());
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const auto& ref = refs[k];
        const auto trace = forward_trace(model.net, datasets[ref.ds].samples[ref.sample].features);
        const Vector u = l2_normalize(trace.output());
        const MatrixLoss l = loss(u, ref.row, w);
        batch_loss += l.loss;
        const Vector grad_raw = l2_normalize_backward(trace.output(), l.grad_f);
        accumulate_backward(model.net, trace, grad_raw, grad_theta, inv);
        if (cfg.train_class_embeddings) {
          const auto src = l.grad_w.data();
          auto dst = grad_w.data();
          for (std::size_t i = 0; i < src.size(); ++i) dst[i] += inv * src[i];
        }
      }
      if (!std::isfinite(batch_loss)) {
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch));
      }
      epoch_loss += batch_loss;

      auto params = model.net.params();
      for (std::size_t i = 0; i < params.size(); ++i) {
        vel_theta[i] = cfg.momentum * vel_theta[i] + grad_theta[i];
        params[i] -= cfg.learning_rate * vel_theta[i];
      }
      if (cfg.train_class_embeddings) {
        for (std::size_t r = 0; r < w.rows(); ++r) {
          auto row = w.row(r);
          auto vel = vel_w.row(r);
          const auto g = grad_w.row(r);
          bool changed = false;
          for (std::size_t i = 0; i < row.size(); ++i) {
            vel[i] = cfg.momentum * vel[i] + g[i];
            const double next = row[i] - cfg.learning_rate * vel[i];
            changed |= next != row[i];
            row[i] = next;
          }
          if (changed) {
            const Vector unit = l2_normalize(row);
            std::copy(unit.begin(), unit.end(), row.begin());
          }
        }
      }
      ++stats.steps;
    }
    if (!all_finite(model.net.params())) throw NonFiniteError("parameters became non-finite");
    stats.mean_loss = epoch_loss / static_cast<double>(refs.size());
  }
  return stats;
}

TrainStats train_am_softmax(Model& model, std::span<const ClientDataset> datasets,
                            const AmSoftmaxConfig& am, const SgdConfig& cfg) {
  am.validate();
  return train_sgd(
      model, datasets,
      [&am](std::span<const double> u, std::size_t row, const Matrix& w) {
        return am_softmax(u, row, w, am);
      },
      cfg);
}

TrainStats train_full_loss(Model& model, std::span<const ClientDataset> datasets,
                           const FullLossConfig& full, const SgdConfig& cfg) {
  full.validate();
  return train_sgd(
      model, datasets,
      [&full](std::span<const double> u, std::size_t row, const Matrix& w) {
        return full_loss(u, row, w, full);
      },
      cfg);
}

TrainStats train_positive_only(Model& model, std::span<const ClientDataset> datasets,
                               const PosLossConfig& pos, const SgdConfig& cfg) {
  pos.validate();
  return train_sgd(
      model, datasets,
      [&pos](std::span<const double> u, std::size_t row, const Matrix& w) {
        VectorLoss l = pos_loss(u, w.row(row), pos);
        MatrixLoss out;
        out.loss = l.loss;
        out.grad_f = std::move(l.grad_f);
        out.grad_w = Matrix(w.rows(), w.cols());
        std::copy(l.grad_w.begin(), l.grad_w.end(), out.grad_w.row(row).begin());
        return out;
      },
      cfg);
}

Matrix mean_feature_rows(const EmbeddingNet& net, std::span<const ClientDataset> datasets) {
  Matrix out(datasets.size(), net.output_dim());
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    datasets[d].validate();
    Vector mean(net.output_dim(), 0.0);
    for (const auto& s : datasets[d].samples) {
      const Vector u = l2_normalize(forward(net, s.features));
      for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += u[k];
    }
    for (double& x : mean) x /= static_cast<double>(datasets[d].size());
    const Vector unit = l2_normalize(mean);
    std::copy(unit.begin(), unit.end(), out.row(d).begin());
  }
  return out;
}

}  // namespace fedface
