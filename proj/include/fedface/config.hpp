#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedface/data.hpp"
#include "fedface/federation.hpp"
#include "fedface/losses.hpp"
#include "fedface/training.hpp"

namespace fedface {

// Every hyperparameter of an experiment. Loaded from JSON; unknown keys are
// rejected and "seed" is mandatory.
struct RunConfig {
  std::string experiment = "default";
  std::uint64_t seed = 0;

  // Identities are split three ways: pretraining, federated clients (one
  // identity each) and held-out evaluation identities.
  std::size_t pretrain_identities = 30;
  std::size_t federated_identities = 20;
  std::size_t eval_identities = 20;
  std::size_t min_samples = 8;
  std::size_t max_samples = 16;
  std::size_t input_dim = 16;
  double noise_sigma = 0.3;

  std::vector<std::size_t> hidden_dims{32};
  std::size_t embedding_dim = 8;

  AmSoftmaxConfig am;
  SgdConfig pretrain;

  LocalTrainConfig local;
  SpreadoutConfig spreadout;
  std::uint32_t rounds = 200;

  FullLossConfig full;
  SgdConfig finetune;

  std::vector<std::size_t> client_counts{1, 4, 16};
  std::uint32_t sweep_rounds = 50;
  SgdConfig sweep;

  std::size_t num_genuine = 500;
  std::size_t num_impostor = 500;
  std::vector<double> far_levels{0.001, 0.01, 0.1};
  std::uint32_t eval_every = 10;  // 0 disables periodic evaluation

  std::string transport = "inprocess";  // or "tcp"
  double timeout_ms = 0.0;              // 0: default (in-process: none, tcp: 30 s)
  unsigned workers = 1;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  bool record_wall_clock = false;

  std::size_t total_identities() const {
    return pretrain_identities + federated_identities + eval_identities;
  }
  std::vector<std::size_t> layer_dims() const;
  SyntheticSpec synthetic_spec() const;

  void validate() const;
};

RunConfig load_config(const std::string& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);

}  // namespace fedface
