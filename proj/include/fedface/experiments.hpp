#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fedface/config.hpp"
#include "fedface/data.hpp"
#include "fedface/eval.hpp"
#include "fedface/federation.hpp"
#include "fedface/training.hpp"

namespace fedface {

// Stage tags for derive_seed(cfg.seed, tag).
enum SeedTag : std::uint64_t {
  kSeedData = 1,
  kSeedHoldout = 2,
  kSeedSplit = 3,
  kSeedPairs = 4,
  kSeedInit = 5,
  kSeedPretrain = 6,
  kSeedClients = 7,
  kSeedFinetune = 8,
  kSeedSweep = 9,
};

struct Splits {
  std::vector<ClientDataset> pretrain;
  std::vector<ClientDataset> federated;  // one identity per client
  std::vector<ClientDataset> eval;
};

std::vector<ClientDataset> generate_data(const RunConfig& cfg);

// Identity-disjoint three-way split, a pure function of (datasets, cfg).
Splits make_splits(const std::vector<ClientDataset>& datasets, const RunConfig& cfg);

PairProtocol eval_pairs(const Splits& splits, const RunConfig& cfg);

// Glorot-initialized net plus random unit class rows for `datasets`.
Model initial_model(const RunConfig& cfg, const std::vector<ClientDataset>& datasets);

// Centralized AM-softmax training on the pretraining identities.
Model pretrain_model(const RunConfig& cfg, const std::vector<ClientDataset>& pretrain,
                     TrainStats* stats = nullptr);

// Federated variants. Each is the same protocol with a different class
// embedding treatment.
enum class Method {
  FedFace,          // mean-feature init, trainable w, spreadout
  NoSpreadout,      // mean-feature init, trainable w
  FedAvg,           // random init, trainable w
  RandomFixed,      // random init, frozen w
  RandomTrainable,  // random init, trainable w, spreadout
};

Method parse_method(const std::string& name);
std::string method_name(Method m);

struct MethodSpec {
  ClassInit init = ClassInit::MeanFeature;
  bool train_class_embedding = true;
  bool spreadout = true;
};

MethodSpec method_spec(Method m);

std::vector<ClientNode> make_client_nodes(const RunConfig& cfg, Method method,
                                          const Layout& layout,
                                          const std::vector<ClientDataset>& clients);

// Runs `cfg.rounds` rounds over `transport`, starting from `start`. The
// returned model holds theta_T and the class rows of every client that
// reported at least once.
Model federate(const RunConfig& cfg, Method method, const EmbeddingNet& start,
               const std::vector<ClientDataset>& clients, Transport& transport,
               const RoundObserver& observer = {});

// Same over an in-process transport built from `clients`.
Model federate_in_process(const RunConfig& cfg, Method method, const EmbeddingNet& start,
                          const std::vector<ClientDataset>& clients,
                          const RoundObserver& observer = {});

// Non-federated reference: the full loss on the pooled federated data, class
// rows initialized from mean features.
Model centralized_finetune(const RunConfig& cfg, const EmbeddingNet& start,
                           const std::vector<ClientDataset>& clients,
                           TrainStats* stats = nullptr);

VerificationReport evaluate(const EmbeddingNet& net, const PairProtocol& pairs,
                            const RunConfig& cfg);

struct SweepResult {
  std::size_t num_clients = 0;
  VerificationReport report;
};

// Multi-identity FedAvg from one shared initialization for each client count,
// over the pretraining and federated identities together.
std::vector<SweepResult> client_sweep(const RunConfig& cfg, const Splits& splits,
                                      const PairProtocol& pairs);

}  // namespace fedface
