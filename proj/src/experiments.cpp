#include "fedface/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <optional>
#include <random>

#include "fedface/transport.hpp"

namespace fedface {

std::vector<ClientDataset> generate_data(const RunConfig& cfg) {
  cfg.validate();
  return generate(cfg.synthetic_spec());
}

Splits make_splits(const std::vector<ClientDataset>& datasets, const RunConfig& cfg) {
  if (datasets.size() != cfg.total_identities()) {
    throw ConfigError("dataset holds " + std::to_string(datasets.size()) +
                      " identities, config expects " + std::to_string(cfg.total_identities()));
  }
  auto [kept, held] = hold_out_identities(datasets, cfg.eval_identities,
                                          derive_seed(cfg.seed, kSeedHoldout));
  const double fraction = static_cast<double>(cfg.pretrain_identities) /
                          static_cast<double>(cfg.pretrain_identities + cfg.federated_identities);
  auto split = split_pretrain_federated(kept, fraction, derive_seed(cfg.seed, kSeedSplit));
  if (split.pretrain.size() != cfg.pretrain_identities) {
    throw ConfigError("pretrain split does not match the configured identity count");
  }
  return {std::move(split.pretrain), std::move(split.federated), std::move(held)};
}

PairProtocol eval_pairs(const Splits& splits, const RunConfig& cfg) {
  return build_pairs(splits.eval, cfg.num_genuine, cfg.num_impostor,
                     derive_seed(cfg.seed, kSeedPairs));
}

Model initial_model(const RunConfig& cfg, const std::vector<ClientDataset>& datasets) {
  std::mt19937_64 rng(derive_seed(cfg.seed, kSeedInit));
  Model model;
  model.net = EmbeddingNet::glorot(Layout(cfg.layer_dims()), rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  model.class_embeddings = Matrix(datasets.size(), cfg.embedding_dim);
  for (std::size_t r = 0; r < datasets.size(); ++r) {
    auto row = model.class_embeddings.row(r);
    for (double& x : row) x = normal(rng);
    const Vector unit = l2_normalize(row);
    std::copy(unit.begin(), unit.end(), row.begin());
    model.class_ids.push_back(datasets[r].identity);
  }
  return model;
}

Model pretrain_model(const RunConfig& cfg, const std::vector<ClientDataset>& pretrain,
                     TrainStats* stats) {
  Model model = initial_model(cfg, pretrain);
  SgdConfig sgd = cfg.pretrain;
  sgd.shuffle_seed = derive_seed(cfg.seed, kSeedPretrain);
  const TrainStats st = train_am_softmax(model, pretrain, cfg.am, sgd);
  if (stats) *stats = st;
  return model;
}

Method parse_method(const std::string& name) {
  if (name == "fedface") return Method::FedFace;
  if (name == "no-spreadout") return Method::NoSpreadout;
  if (name == "fedavg") return Method::FedAvg;
  if (name == "random-init") return Method::RandomFixed;
  if (name == "random-trainable-init") return Method::RandomTrainable;
  throw ConfigError("unknown federated method '" + name + "'");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::FedFace:
      return "fedface";
    case Method::NoSpreadout:
      return "no-spreadout";
    case Method::FedAvg:
      return "fedavg";
    case Method::RandomFixed:
      return "random-init";
    case Method::RandomTrainable:
      return "random-trainable-init";
  }
  return "unknown";
}

MethodSpec method_spec(Method m) {
  switch (m) {
    case Method::FedFace:
      return {ClassInit::MeanFeature, true, true};
    case Method::NoSpreadout:
      return {ClassInit::MeanFeature, true, false};
    case Method::FedAvg:
      return {ClassInit::RandomGaussian, true, false};
    case Method::RandomFixed:
      return {ClassInit::RandomGaussian, false, false};
    case Method::RandomTrainable:
      return {ClassInit::RandomGaussian, true, true};
  }
  throw ConfigError("unknown federated method");
}

std::vector<ClientNode> make_client_nodes(const RunConfig& cfg, Method method,
                                          const Layout& layout,
                                          const std::vector<ClientDataset>& clients) {
  const MethodSpec spec = method_spec(method);
  std::vector<ClientNode> nodes;
  nodes.reserve(clients.size());
  for (const auto& ds : clients) {
    ClientState st;
    st.client_id = ds.identity;
    st.dataset = ds;
    st.layout = layout;
    st.train = cfg.local;
    st.train.train_class_embedding = spec.train_class_embedding;
    st.init = spec.init;
    st.seed = derive_seed(cfg.seed, kSeedClients);
    nodes.emplace_back(std::move(st));
  }
  return nodes;
}

Model federate(const RunConfig& cfg, Method method, const EmbeddingNet& start,
               const std::vector<ClientDataset>& clients, Transport& transport,
               const RoundObserver& observer) {
  std::vector<std::uint32_t> ids;
  for (const auto& ds : clients) ids.push_back(ds.identity);
  ServerState server = ServerState::initial(flatten(start), ids, start.output_dim(), cfg.rounds,
                                            cfg.spreadout);
  const MethodSpec spec = method_spec(method);
  run_federation(server, transport, {.spreadout = spec.spreadout}, observer);
  Model out;
  out.net = unflatten(server.theta, start.layout());
  out.class_embeddings = server.known_embeddings();
  for (std::size_t r = 0; r < server.client_ids.size(); ++r) {
    if (server.has_embedding[r]) out.class_ids.push_back(server.client_ids[r]);
  }
  return out;
}

Model federate_in_process(const RunConfig& cfg, Method method, const EmbeddingNet& start,
                          const std::vector<ClientDataset>& clients,
                          const RoundObserver& observer) {
  std::optional<std::chrono::milliseconds> timeout;
  if (cfg.timeout_ms > 0.0) {
    timeout = std::chrono::milliseconds(static_cast<std::int64_t>(cfg.timeout_ms));
  }
  InProcessTransport transport(make_client_nodes(cfg, method, start.layout(), clients), timeout,
                               cfg.workers);
  return federate(cfg, method, start, clients, transport, observer);
}

Model centralized_finetune(const RunConfig& cfg, const EmbeddingNet& start,
                           const std::vector<ClientDataset>& clients, TrainStats* stats) {
  Model model;
  model.net = start;
  model.class_embeddings = mean_feature_rows(start, clients);
  for (const auto& ds : clients) model.class_ids.push_back(ds.identity);
  SgdConfig sgd = cfg.finetune;
  sgd.shuffle_seed = derive_seed(cfg.seed, kSeedFinetune);
  const TrainStats st = train_full_loss(model, clients, cfg.full, sgd);
  if (stats) *stats = st;
  return model;
}

VerificationReport evaluate(const EmbeddingNet& net, const PairProtocol& pairs,
                            const RunConfig& cfg) {
  const auto scored = score_pairs(net, pairs);
  return roc_and_tar(scored, cfg.far_levels);
}

std::vector<SweepResult> client_sweep(const RunConfig& cfg, const Splits& splits,
                                      const PairProtocol& pairs) {
  std::vector<ClientDataset> pool = splits.pretrain;
  pool.insert(pool.end(), splits.federated.begin(), splits.federated.end());
  std::sort(pool.begin(), pool.end(),
            [](const ClientDataset& a, const ClientDataset& b) { return a.identity < b.identity; });
  const Model start = initial_model(cfg, pool);

  MultiClientConfig mc;
  mc.am = cfg.am;
  mc.sgd = cfg.sweep;
  mc.sgd.shuffle_seed = derive_seed(cfg.seed, kSeedSweep);

  std::vector<SweepResult> out;
  for (std::size_t k : cfg.client_counts) {
    const auto partition = partition_identities(pool, k, derive_seed(cfg.seed, kSeedSweep, k));
    const Model trained = run_multiclient_fedavg(partition, start, mc, cfg.sweep_rounds);
    out.push_back({k, evaluate(trained.net, pairs, cfg)});
  }
  return out;
}

}  // namespace fedface
