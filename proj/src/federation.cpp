#include "fedface/federation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>

#include "fedface/log.hpp"

namespace fedface {

ClassEmbeddingMatrix::ClassEmbeddingMatrix(Matrix rows) : rows_(std::move(rows)) {
  for (std::size_t r = 0; r < rows_.rows(); ++r) {
    if (!(std::abs(norm2(rows_.row(r)) - 1.0) <= kUnitTolerance)) {
      throw UnitNormError("class embedding row " + std::to_string(r) + " is not unit-norm");
    }
  }
}

ClassEmbeddingMatrix ClassEmbeddingMatrix::normalized(Matrix rows) {
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const Vector unit = l2_normalize(rows.row(r));
    std::copy(unit.begin(), unit.end(), rows.row(r).begin());
  }
  return ClassEmbeddingMatrix(std::move(rows));
}

void LocalTrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be finite and nonnegative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (local_epochs < 1) throw ConfigError("local_epochs must be positive");
  pos.validate();
}

Vector mean_feature_init(const EmbeddingNet& net, const ClientDataset& dataset) {
  const Matrix rows = mean_feature_rows(net, std::span(&dataset, 1));
  return Vector(rows.row(0).begin(), rows.row(0).end());
}

Vector random_class_init(std::size_t dim, std::uint64_t seed, std::uint32_t client_id) {
  std::mt19937_64 rng(derive_seed(seed, client_id, 0x636c617373ULL));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector w(dim);
  for (double& x : w) x = normal(rng);
  return l2_normalize(w);
}

ClientUpdate client_local_update(const ClientState& state, const ParamVector& theta,
                                 std::span<const double> class_embedding, std::uint32_t round) {
  state.train.validate();
  state.dataset.validate();
  if (state.dataset.identity != state.client_id) {
    throw ConfigError("client " + std::to_string(state.client_id) + " holds identity " +
                      std::to_string(state.dataset.identity));
  }
  if (!(theta.layout == state.layout)) throw LayoutError("client update: theta layout mismatch");
  if (class_embedding.size() != state.layout.output_dim()) {
    throw ShapeError("client update: class embedding has the wrong dimension");
  }

  Model local;
  local.net = unflatten(theta, state.layout);
  local.class_embeddings = Matrix(1, class_embedding.size());
  std::copy(class_embedding.begin(), class_embedding.end(), local.class_embeddings.row(0).begin());
  local.class_ids = {state.client_id};

  SgdConfig sgd;
  sgd.learning_rate = state.train.learning_rate;
  sgd.momentum = state.train.momentum;
  sgd.epochs = state.train.local_epochs;
  sgd.batch_size = state.train.batch_size;
  sgd.train_class_embeddings = state.train.train_class_embedding;
  sgd.shuffle_seed = derive_seed(state.seed, state.client_id, round);
  const TrainStats stats =
      train_positive_only(local, std::span(&state.dataset, 1), state.train.pos, sgd);

  ClientUpdate out;
  out.client_id = state.client_id;
  out.theta = flatten(local.net);
  out.class_embedding.assign(local.class_embeddings.row(0).begin(),
                             local.class_embeddings.row(0).end());
  out.num_samples = state.dataset.size();
  out.mean_loss = stats.mean_loss;
  return out;
}

ServerState ServerState::initial(ParamVector theta0, std::vector<std::uint32_t> client_ids,
                                 std::size_t embedding_dim, std::uint32_t total_rounds,
                                 SpreadoutConfig spreadout) {
  spreadout.validate();
  std::sort(client_ids.begin(), client_ids.end());
  if (std::adjacent_find(client_ids.begin(), client_ids.end()) != client_ids.end()) {
    throw ConfigError("server: duplicate client id");
  }
  if (embedding_dim != theta0.layout.output_dim()) {
    throw LayoutError("server: embedding dim does not match the model layout");
  }
  ServerState s;
  s.theta = std::move(theta0);
  s.client_ids = std::move(client_ids);
  s.class_embeddings = Matrix(s.client_ids.size(), embedding_dim);
  s.has_embedding.assign(s.client_ids.size(), false);
  s.total_rounds = total_rounds;
  s.spreadout = spreadout;
  return s;
}

std::size_t ServerState::row_of(std::uint32_t client_id) const {
  const auto it = std::lower_bound(client_ids.begin(), client_ids.end(), client_id);
  if (it == client_ids.end() || *it != client_id) {
    throw ConfigError("unknown client id " + std::to_string(client_id));
  }
  return static_cast<std::size_t>(it - client_ids.begin());
}

Matrix ServerState::known_embeddings() const {
  std::vector<Vector> rows;
  for (std::size_t r = 0; r < client_ids.size(); ++r) {
    if (has_embedding[r]) {
      rows.emplace_back(class_embeddings.row(r).begin(), class_embeddings.row(r).end());
    }
  }
  return Matrix::from_rows(rows);
}

ServerState aggregate(std::span<const ClientUpdate> updates, const ServerState& prev) {
  if (updates.empty()) throw ConfigError("aggregate: no updates");
  std::vector<const ClientUpdate*> sorted;
  sorted.reserve(updates.size());
  for (const auto& u : updates) sorted.push_back(&u);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto* a, const auto* b) { return a->client_id < b->client_id; });

  std::uint64_t total = 0;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    const auto& u = *sorted[k];
    if (k > 0 && sorted[k - 1]->client_id == u.client_id) {
      throw ConfigError("aggregate: duplicate update from client " + std::to_string(u.client_id));
    }
    if (!(u.theta.layout == prev.theta.layout) || u.theta.size() != prev.theta.size()) {
      throw LayoutError("aggregate: layout mismatch from client " + std::to_string(u.client_id));
    }
    if (u.class_embedding.size() != prev.class_embeddings.cols()) {
      throw ShapeError("aggregate: class embedding dim mismatch");
    }
    if (u.num_samples == 0) throw ConfigError("aggregate: update with zero samples");
    prev.row_of(u.client_id);
    total += u.num_samples;
  }

  ServerState next = prev;
  const auto n = static_cast<double>(total);
  Vector acc(prev.theta.size(), 0.0);
  for (const auto* u : sorted) {
    const double weight = static_cast<double>(u->num_samples) / n;
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += weight * u->theta.values[i];
  }
  next.theta.values = std::move(acc);
  for (const auto* u : sorted) {
    const std::size_t r = next.row_of(u->client_id);
    std::copy(u->class_embedding.begin(), u->class_embedding.end(),
              next.class_embeddings.row(r).begin());
    next.has_embedding[r] = true;
  }
  return next;
}

ServerState server_spreadout_step(const ServerState& state) {
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < state.client_ids.size(); ++r) {
    if (state.has_embedding[r]) rows.push_back(r);
  }
  if (rows.size() < 2) {
    log_warning("spreadout step skipped: fewer than two class embeddings");
    return state;
  }
  const Matrix known = state.known_embeddings();
  const SpreadoutResult sp = spreadout(known, state.spreadout);
  ServerState next = state;
  const double step = state.spreadout.step_size * state.spreadout.lambda_weight;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto g = sp.grad_w.row(k);
    auto row = next.class_embeddings.row(rows[k]);
    bool changed = false;
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double moved = row[i] - step * g[i];
      changed |= moved != row[i];
      row[i] = moved;
    }
    if (changed) {
      const Vector unit = l2_normalize(row);
      std::copy(unit.begin(), unit.end(), row.begin());
    }
  }
  return next;
}

ClientNode::ClientNode(ClientState state) : state_(std::move(state)) {
  state_.dataset.validate();
  state_.train.validate();
  if (state_.dataset.identity != state_.client_id) {
    throw ConfigError("client " + std::to_string(state_.client_id) + " holds identity " +
                      std::to_string(state_.dataset.identity));
  }
}

NegotiatedShape ClientNode::shape() const {
  return {state_.layout.param_count(), state_.layout.output_dim()};
}

WireMessage ClientNode::handle(const WireMessage& broadcast) const {
  WireMessage reply;
  reply.round = broadcast.round;
  reply.client_id = state_.client_id;
  auto fail = [&](ErrorCode code, const std::string& what) {
    reply.type = MessageType::Error;
    reply.payload = encode_error({code, what});
    return reply;
  };
  if (broadcast.type != MessageType::ServerBroadcast) {
    return fail(ErrorCode::BadRequest, "expected a server broadcast");
  }
  if (broadcast.client_id != state_.client_id) {
    return fail(ErrorCode::BadRequest, "broadcast addressed to another client");
  }
  try {
    const BroadcastPayload in = decode_broadcast(broadcast.payload, shape());
    const ParamVector theta(state_.layout, in.theta);
    Vector w;
    if (in.class_embedding) {
      w = *in.class_embedding;
    } else if (state_.init == ClassInit::MeanFeature) {
      w = mean_feature_init(unflatten(theta, state_.layout), state_.dataset);
    } else {
      w = random_class_init(state_.layout.output_dim(), state_.seed, state_.client_id);
    }
    const ClientUpdate upd = client_local_update(state_, theta, w, broadcast.round);
    reply.type = MessageType::ClientUpdate;
    reply.payload = encode_update({upd.theta.values, upd.class_embedding, upd.num_samples});
    return reply;
  } catch (const NonFiniteError& e) {
    return fail(ErrorCode::NonFiniteLoss, e.what());
  } catch (const DecodeError& e) {
    return fail(ErrorCode::BadRequest, e.what());
  } catch (const Error& e) {
    return fail(ErrorCode::Internal, e.what());
  }
}

namespace {

double known_spreadout(const ServerState& s) {
  const Matrix known = s.known_embeddings();
  if (known.rows() < 2) return 0.0;
  return spreadout(known, s.spreadout).reg;
}

}  // namespace

ParamVector run_federation(ServerState& server, Transport& transport,
                           const FederationOptions& options, const RoundObserver& observer) {
  if (server.round > server.total_rounds) throw ConfigError("server round exceeds total rounds");
  const NegotiatedShape shape{server.theta.size(), server.class_embeddings.cols()};
  while (server.round < server.total_rounds) {
    std::vector<WireMessage> broadcasts;
    broadcasts.reserve(server.client_ids.size());
    for (std::size_t r = 0; r < server.client_ids.size(); ++r) {
      BroadcastPayload p;
      p.theta = server.theta.values;
      if (server.has_embedding[r]) {
        p.class_embedding.emplace(server.class_embeddings.row(r).begin(),
                                  server.class_embeddings.row(r).end());
      }
      WireMessage m;
      m.type = MessageType::ServerBroadcast;
      m.round = server.round;
      m.client_id = server.client_ids[r];
      m.payload = encode_broadcast(p);
      broadcasts.push_back(std::move(m));
    }

    const std::vector<WireMessage> replies = transport.exchange(server.round, broadcasts);

    RoundReport report;
    std::vector<ClientUpdate> updates;
    std::set<std::uint32_t> seen;
    for (const auto& reply : replies) {
      if (reply.round != server.round) continue;  // stale
      if (!std::binary_search(server.client_ids.begin(), server.client_ids.end(),
                              reply.client_id) ||
          !seen.insert(reply.client_id).second) {
        log_warning("ignoring reply from unexpected client " + std::to_string(reply.client_id));
        continue;
      }
      if (reply.type == MessageType::Error) {
        const ErrorPayload err = decode_error(reply.payload);
        if (err.code == ErrorCode::NonFiniteLoss) {
          throw NonFiniteError("client " + std::to_string(reply.client_id) + ": " + err.message);
        }
        log_warning("client " + std::to_string(reply.client_id) + " failed: " + err.message);
        continue;
      }
      if (reply.type != MessageType::ClientUpdate) continue;
      try {
        UpdatePayload p = decode_update(reply.payload, shape);
        ClientUpdate u;
        u.client_id = reply.client_id;
        u.theta = ParamVector(server.theta.layout, std::move(p.theta));
        u.class_embedding = std::move(p.class_embedding);
        u.num_samples = p.num_samples;
        updates.push_back(std::move(u));
      } catch (const DecodeError& e) {
        log_warning("client " + std::to_string(reply.client_id) + " sent a bad update: " + e.what());
      }
    }
    for (const auto& u : updates) report.reported.push_back(u.client_id);
    std::sort(report.reported.begin(), report.reported.end());
    for (auto id : server.client_ids) {
      if (!std::binary_search(report.reported.begin(), report.reported.end(), id)) {
        report.excluded.push_back(id);
      }
    }

    if (!updates.empty()) {
      server = aggregate(updates, server);
    } else {
      log_warning("round " + std::to_string(server.round) + ": no client reported");
    }
    report.spreadout_before = known_spreadout(server);
    if (options.spreadout) server = server_spreadout_step(server);
    report.spreadout_after = known_spreadout(server);

    ++server.round;
    report.round = server.round;
    if (observer) observer(server, report);
  }
  transport.finish(server.round);
  return server.theta;
}

ParamVector run_fedface(ServerState& server, Transport& transport, std::uint32_t total_rounds,
                        const RoundObserver& observer) {
  server.total_rounds = total_rounds;
  return run_federation(server, transport, {.spreadout = true}, observer);
}

ParamVector run_fedavg_baseline(ServerState& server, Transport& transport,
                                std::uint32_t total_rounds, const RoundObserver& observer) {
  server.total_rounds = total_rounds;
  return run_federation(server, transport, {.spreadout = false}, observer);
}

Model run_multiclient_fedavg(const std::vector<std::vector<ClientDataset>>& partition, Model model,
                             const MultiClientConfig& cfg, std::uint32_t rounds,
                             const MultiClientObserver& observer) {
  if (partition.empty()) throw ConfigError("multi-client fedavg: no clients");
  std::set<std::uint32_t> identities;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& client : partition) {
    if (client.empty()) throw ConfigError("multi-client fedavg: client without identities");
    std::uint64_t n = 0;
    for (const auto& ds : client) {
      ds.validate();
      if (!identities.insert(ds.identity).second) {
        throw ConfigError("multi-client fedavg: identity " + std::to_string(ds.identity) +
                          " appears on more than one client");
      }
      model.row_of(ds.identity);
      n += ds.size();
    }
    counts.push_back(n);
    total += n;
  }

  for (std::uint32_t round = 0; round < rounds; ++round) {
    Vector theta_acc(model.net.params().size(), 0.0);
    Matrix w_acc(model.class_embeddings.rows(), model.class_embeddings.cols());
    for (std::size_t k = 0; k < partition.size(); ++k) {
      Model local;
      local.net = model.net;
      std::vector<Vector> rows;
      for (const auto& ds : partition[k]) {
        const auto r = model.class_embeddings.row(model.row_of(ds.identity));
        rows.emplace_back(r.begin(), r.end());
        local.class_ids.push_back(ds.identity);
      }
      local.class_embeddings = Matrix::from_rows(rows);
      SgdConfig sgd = cfg.sgd;
      sgd.shuffle_seed = derive_seed(cfg.sgd.shuffle_seed, k, round);
      train_am_softmax(local, partition[k], cfg.am, sgd);

      const double weight = static_cast<double>(counts[k]) / static_cast<double>(total);
      const auto p = local.net.params();
      for (std::size_t i = 0; i < p.size(); ++i) theta_acc[i] += weight * p[i];
      Matrix client_w = model.class_embeddings;
      for (std::size_t j = 0; j < local.class_ids.size(); ++j) {
        const auto src = local.class_embeddings.row(j);
        std::copy(src.begin(), src.end(), client_w.row(model.row_of(local.class_ids[j])).begin());
      }
      const auto src = client_w.data();
      auto dst = w_acc.data();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] += weight * src[i];
    }
    std::copy(theta_acc.begin(), theta_acc.end(), model.net.params().begin());
    for (std::size_t r = 0; r < w_acc.rows(); ++r) {
      const Vector unit = l2_normalize(w_acc.row(r));
      std::copy(unit.begin(), unit.end(), w_acc.row(r).begin());
    }
    model.class_embeddings = std::move(w_acc);
    if (observer) observer(round + 1, model);
  }
  return model;
}

std::vector<std::vector<ClientDataset>> partition_identities(
    const std::vector<ClientDataset>& datasets, std::size_t num_clients, std::uint64_t seed) {
  if (num_clients == 0 || num_clients > datasets.size()) {
    throw ConfigError("cannot split " + std::to_string(datasets.size()) + " identities over " +
                      std::to_string(num_clients) + " clients");
  }
  std::vector<std::size_t> order(datasets.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<ClientDataset>> out(num_clients);
  for (std::size_t k = 0; k < order.size(); ++k) out[k % num_clients].push_back(datasets[order[k]]);
  return out;
}

}  // namespace fedface
