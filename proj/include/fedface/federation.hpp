#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedface/data.hpp"
#include "fedface/losses.hpp"
#include "fedface/numerics.hpp"
#include "fedface/training.hpp"
#include "fedface/wire.hpp"

namespace fedface {

// C x d matrix whose rows are unit vectors (within kUnitTolerance).
class ClassEmbeddingMatrix {
 public:
  ClassEmbeddingMatrix() = default;
  explicit ClassEmbeddingMatrix(Matrix rows);

  static ClassEmbeddingMatrix normalized(Matrix rows);

  std::size_t num_classes() const noexcept { return rows_.rows(); }
  std::size_t dim() const noexcept { return rows_.cols(); }
  std::span<const double> row(std::size_t i) const { return rows_.row(i); }
  const Matrix& matrix() const noexcept { return rows_; }

 private:
  Matrix rows_;
};

// How a client obtains w_0^i when the server has none for it yet.
enum class ClassInit {
  MeanFeature,     // normalized mean of the normalized instance embeddings under theta
  RandomGaussian,  // N(0, I) draw seeded by (seed, client_id), normalized
};

struct LocalTrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 0;  // 0 = full batch
  PosLossConfig pos;
  bool train_class_embedding = true;

  void validate() const;
};

struct ClientState {
  std::uint32_t client_id = 0;
  ClientDataset dataset;
  Layout layout;
  LocalTrainConfig train;
  ClassInit init = ClassInit::MeanFeature;
  std::uint64_t seed = 0;
};

struct ClientUpdate {
  std::uint32_t client_id = 0;
  ParamVector theta;
  Vector class_embedding;
  std::uint64_t num_samples = 0;
  double mean_loss = 0.0;  // local diagnostic, never sent
};

Vector mean_feature_init(const EmbeddingNet& net, const ClientDataset& dataset);
Vector random_class_init(std::size_t dim, std::uint64_t seed, std::uint32_t client_id);

// local_epochs passes of momentum SGD on the mean positive loss over the
// client's samples, updating theta and (unless frozen) w. w is projected back
// to the unit sphere after every step that changes it.
ClientUpdate client_local_update(const ClientState& state, const ParamVector& theta,
                                 std::span<const double> class_embedding,
                                 std::uint32_t round = 0);

struct ServerState {
  ParamVector theta;
  std::vector<std::uint32_t> client_ids;  // ascending; row k of W belongs to client_ids[k]
  Matrix class_embeddings;
  std::vector<bool> has_embedding;  // false until the client first reports
  std::uint32_t round = 0;
  std::uint32_t total_rounds = 0;
  SpreadoutConfig spreadout;

  static ServerState initial(ParamVector theta0, std::vector<std::uint32_t> client_ids,
                             std::size_t embedding_dim, std::uint32_t total_rounds,
                             SpreadoutConfig spreadout);

  std::size_t row_of(std::uint32_t client_id) const;

  // Rows that have been reported at least once, in row order.
  Matrix known_embeddings() const;
};

// theta <- sum_i (n_i / n) theta_i summed in ascending client_id order; W row
// i <- w_i for each reporting client, other rows unchanged.
ServerState aggregate(std::span<const ClientUpdate> updates, const ServerState& prev);

// W <- W - step_size lambda grad reg_sp(W) over the known rows, then renormalizes the
// rows that moved. Fewer than two known rows: warning, no change.
ServerState server_spreadout_step(const ServerState& state);

// Client side of the protocol: answers one ServerBroadcast with a
// ClientUpdate, or with an Error message.
class ClientNode {
 public:
  explicit ClientNode(ClientState state);

  std::uint32_t client_id() const noexcept { return state_.client_id; }
  const ClientState& state() const noexcept { return state_; }
  NegotiatedShape shape() const;

  WireMessage handle(const WireMessage& broadcast) const;

 private:
  ClientState state_;
};

// Server side of a round trip. exchange() delivers one broadcast per client
// and returns the replies that arrived before the round deadline, ordered by
// ascending client_id. Missing clients are excluded from the round.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::vector<WireMessage> exchange(std::uint32_t round,
                                            const std::vector<WireMessage>& broadcasts) = 0;
  // Tells clients that training ended after `rounds` rounds.
  virtual void finish(std::uint32_t rounds) { (void)rounds; }
};

struct RoundReport {
  std::uint32_t round = 0;  // rounds completed so far
  std::vector<std::uint32_t> reported;
  std::vector<std::uint32_t> excluded;
  double spreadout_before = 0.0;  // reg_sp after aggregation
  double spreadout_after = 0.0;   // reg_sp after the server step
};

using RoundObserver = std::function<void(const ServerState&, const RoundReport&)>;

struct FederationOptions {
  bool spreadout = true;
};

// Runs rounds until server.round == total_rounds.
ParamVector run_federation(ServerState& server, Transport& transport,
                           const FederationOptions& options, const RoundObserver& observer = {});

// FedFace: broadcast, local positive-only update, aggregate, spreadout.
ParamVector run_fedface(ServerState& server, Transport& transport, std::uint32_t total_rounds,
                        const RoundObserver& observer = {});

// Same protocol without the spreadout step.
ParamVector run_fedavg_baseline(ServerState& server, Transport& transport,
                                std::uint32_t total_rounds, const RoundObserver& observer = {});

struct MultiClientConfig {
  AmSoftmaxConfig am;
  SgdConfig sgd;  // sgd.epochs = local epochs per round
};

using MultiClientObserver = std::function<void(std::uint32_t round, const Model&)>;

// Plain FedAvg over clients that each hold several identities; each client
// trains AM-softmax over the identities it holds, and the server averages
// theta and W weighted by sample count, then renormalizes W's rows.
// `model.class_ids` must cover every identity in `partition`.
Model run_multiclient_fedavg(const std::vector<std::vector<ClientDataset>>& partition, Model model,
                             const MultiClientConfig& cfg, std::uint32_t rounds,
                             const MultiClientObserver& observer = {});

// Seeded, identity-disjoint split into `num_clients` groups whose sizes
// differ by at most one.
std::vector<std::vector<ClientDataset>> partition_identities(
    const std::vector<ClientDataset>& datasets, std::size_t num_clients, std::uint64_t seed);

}  // namespace fedface
