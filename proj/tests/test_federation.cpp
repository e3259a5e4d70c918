#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>

#include "fedface/config.hpp"
#include "fedface/experiments.hpp"
#include "fedface/federation.hpp"
#include "fedface/log.hpp"
#include "fedface/transport.hpp"
#include "oracles.hpp"

using namespace fedface;

namespace {

ClientDataset make_dataset(std::uint32_t id, const std::vector<Vector>& xs) {
  ClientDataset ds;
  ds.identity = id;
  for (const auto& x : xs) ds.samples.push_back({x, id});
  return ds;
}

ClientDataset random_dataset(std::uint32_t id, std::size_t n, std::size_t dim,
                             std::mt19937_64& rng) {
  std::vector<Vector> xs;
  const Vector proto = oracle::random_vector(dim, rng);
  for (std::size_t k = 0; k < n; ++k) {
    Vector x = oracle::random_vector(dim, rng, 0.3);
    for (std::size_t i = 0; i < dim; ++i) x[i] += proto[i];
    xs.push_back(x);
  }
  return make_dataset(id, xs);
}

ClientState make_client(const ClientDataset& ds, const Layout& layout, double lr,
                        std::size_t epochs = 1) {
  ClientState st;
  st.client_id = ds.identity;
  st.dataset = ds;
  st.layout = layout;
  st.train.learning_rate = lr;
  st.train.local_epochs = epochs;
  st.seed = 77;
  return st;
}

ClientUpdate random_update(std::uint32_t id, const Layout& layout, std::size_t d,
                           std::mt19937_64& rng) {
  ClientUpdate u;
  u.client_id = id;
  u.theta = ParamVector(layout, oracle::random_vector(layout.param_count(), rng, 10.0));
  u.class_embedding = oracle::random_unit(d, rng);
  u.num_samples = std::uniform_int_distribution<std::uint64_t>(1, 1000)(rng);
  return u;
}

struct Toy {
  Layout layout;
  EmbeddingNet net;
  std::vector<ClientDataset> clients;
};

Toy make_toy(std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Toy t;
  t.layout = Layout({5, 6, 3});
  t.net = EmbeddingNet::glorot(t.layout, rng);
  for (std::uint32_t i = 0; i < c; ++i) {
    t.clients.push_back(random_dataset(10 + i * 3, 3 + i % 3, 5, rng));
  }
  return t;
}

std::vector<ClientNode> nodes_for(const Toy& t, double lr, ClassInit init = ClassInit::MeanFeature,
                                  bool trainable = true) {
  std::vector<ClientNode> nodes;
  for (const auto& ds : t.clients) {
    ClientState st = make_client(ds, t.layout, lr, 2);
    st.init = init;
    st.train.train_class_embedding = trainable;
    nodes.emplace_back(st);
  }
  return nodes;
}

std::vector<std::uint32_t> ids_of(const Toy& t) {
  std::vector<std::uint32_t> ids;
  for (const auto& ds : t.clients) ids.push_back(ds.identity);
  return ids;
}

// Records every reply on its way back to the server.
class RecordingTransport : public Transport {
 public:
  explicit RecordingTransport(Transport& inner) : inner_(inner) {}
  std::vector<WireMessage> exchange(std::uint32_t round,
                                    const std::vector<WireMessage>& broadcasts) override {
    auto replies = inner_.exchange(round, broadcasts);
    log.push_back(replies);
    return replies;
  }
  std::vector<std::vector<WireMessage>> log;

 private:
  Transport& inner_;
};

double mean_similarity(const Matrix& w) {
  double s = 0;
  int n = 0;
  for (std::size_t a = 0; a < w.rows(); ++a) {
    for (std::size_t b = a + 1; b < w.rows(); ++b, ++n) s += oracle::dotp(
        Vector(w.row(a).begin(), w.row(a).end()), Vector(w.row(b).begin(), w.row(b).end()));
  }
  return s / n;
}

}  // namespace

TEST_SUITE("federation") {
  TEST_CASE("mean_feature_init examples") {
    const EmbeddingNet id(Layout({2, 2}), Vector{1, 0, 0, 1, 0, 0});
    const Vector w = mean_feature_init(id, make_dataset(0, {{1, 0}, {0, 1}}));
    CHECK(w[0] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-15));

    const Vector single = mean_feature_init(id, make_dataset(0, {{3, -4}}));
    CHECK(single[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(single[1] == doctest::Approx(-0.8).epsilon(1e-15));

    CHECK_THROWS_AS(mean_feature_init(id, make_dataset(0, {{1, 0}, {-1, 0}})),
                    DegenerateEmbeddingError);
  }

  TEST_CASE("mean_feature_init matches mean-then-normalize") {
    std::mt19937_64 rng(9);
    const std::vector<std::size_t> dims{4, 6, 3};
    const EmbeddingNet net = EmbeddingNet::glorot(Layout(dims), rng);
    const ClientDataset ds = random_dataset(4, 5, 4, rng);
    Vector mean(3, 0.0);
    for (const auto& s : ds.samples) {
      const Vector u = oracle::unit(oracle::net_formula(dims, Vector(net.params().begin(), net.params().end()), s.features));
      for (int k = 0; k < 3; ++k) mean[k] += u[k] / 5.0;
    }
    const Vector expect = oracle::unit(mean);
    const Vector got = mean_feature_init(net, ds);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(got[k] - expect[k]) < 1e-12);
  }

  TEST_CASE("zero learning rate leaves theta and w untouched") {
    std::mt19937_64 rng(2);
    const Layout layout({3, 4, 2});
    const EmbeddingNet net = EmbeddingNet::glorot(layout, rng);
    const ClientDataset ds = random_dataset(1, 4, 3, rng);
    const Vector w = oracle::random_unit(2, rng);
    const auto u = client_local_update(make_client(ds, layout, 0.0, 3), flatten(net), w);
    CHECK(u.theta == flatten(net));
    CHECK(u.class_embedding == w);
    CHECK(u.num_samples == 4);
  }

  TEST_CASE("a satisfied margin leaves parameters unchanged") {
    const Layout layout({2, 2});
    const EmbeddingNet id(layout, Vector{1, 0, 0, 1, 0, 0});
    const ClientDataset ds = make_dataset(3, {{2, 0.1}, {1, 0.05}, {0.5, -0.02}});
    const Vector w{1, 0};
    const auto u = client_local_update(make_client(ds, layout, 0.5, 5), flatten(id), w);
    CHECK(u.theta == flatten(id));
    CHECK(u.class_embedding == w);
  }

  TEST_CASE("one local step matches a hand-stepped SGD update") {
    std::mt19937_64 rng(14);
    const std::vector<std::size_t> dims{3, 3, 2};
    const Layout layout(dims);
    const Vector params = oracle::random_vector(layout.param_count(), rng, 0.6);
    const ClientDataset ds = random_dataset(5, 2, 3, rng);
    const Vector w = oracle::random_unit(2, rng);
    const double lr = 0.05;
    const double m = 0.9;

    // Mean positive loss over both samples as a function of (theta, w).
    auto loss = [&](const Vector& p) {
      const Vector th(p.begin(), p.end() - 2);
      const Vector wv(p.end() - 2, p.end());
      double s = 0;
      for (const auto& smp : ds.samples) {
        s += oracle::pos_formula(oracle::unit(oracle::net_formula(dims, th, smp.features)), wv, m);
      }
      return s / 2.0;
    };
    const Vector x = oracle::concat({params, w});
    const Vector g = oracle::fd_gradient(loss, x);
    Vector theta1(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) theta1[i] = params[i] - lr * g[i];
    const Vector w1 = oracle::unit({w[0] - lr * g[params.size()], w[1] - lr * g[params.size() + 1]});

    ClientState st = make_client(ds, layout, lr, 1);
    st.train.pos.m_margin = m;
    const auto u = client_local_update(st, ParamVector(layout, params), w);
    for (std::size_t i = 0; i < params.size(); ++i) CHECK(std::abs(u.theta.values[i] - theta1[i]) < 1e-9);
    CHECK(std::abs(u.class_embedding[0] - w1[0]) < 1e-9);
    CHECK(std::abs(u.class_embedding[1] - w1[1]) < 1e-9);
    CHECK(std::abs(oracle::dotp(u.class_embedding, u.class_embedding) - 1.0) < 1e-12);
  }

  TEST_CASE("local update rejects a dataset with a foreign label") {
    const Layout layout({2, 2});
    ClientDataset ds = make_dataset(1, {{1, 0}});
    ds.samples[0].identity = 2;
    CHECK_THROWS_AS(client_local_update(make_client(ds, layout, 0.1), ParamVector(layout), Vector{1, 0}),
                    ConfigError);
  }

  TEST_CASE("aggregate examples") {
    const Layout layout({1, 1});  // weight + bias: two scalars
    ServerState prev = ServerState::initial(ParamVector(layout), {1, 2}, 1, 1, {});
    ClientUpdate a{1, ParamVector(layout, {2, 2}), {1.0}, 1, 0};
    ClientUpdate b{2, ParamVector(layout, {6, 6}), {-1.0}, 3, 0};
    const ServerState next = aggregate(std::vector{a, b}, prev);
    CHECK(next.theta.values[0] == 5.0);
    CHECK(next.class_embeddings(0, 0) == 1.0);
    CHECK(next.class_embeddings(1, 0) == -1.0);

    const ServerState one = aggregate(std::vector{b}, prev);
    CHECK(one.theta.values == b.theta.values);
    CHECK(one.has_embedding == std::vector<bool>{false, true});
    CHECK(one.class_embeddings(0, 0) == 0.0);

    CHECK_THROWS_AS(aggregate(std::vector{a, a}, prev), ConfigError);
    ClientUpdate bad{2, ParamVector(Layout({2, 1}), {1, 1, 1}), {1.0}, 1, 0};
    CHECK_THROWS_AS(aggregate(std::vector{a, bad}, prev), LayoutError);
    CHECK_THROWS_AS(aggregate(std::vector<ClientUpdate>{}, prev), ConfigError);
  }

  TEST_CASE("aggregate equals the brute-force weighted mean in any arrival order") {
    std::mt19937_64 rng(33);
    const Layout layout({4, 3, 2});
    for (int k = 0; k < 20; ++k) {
      std::vector<std::uint32_t> ids{3, 8, 11, 20, 42};
      ServerState prev = ServerState::initial(ParamVector(layout), ids, 2, 1, {});
      std::vector<ClientUpdate> updates;
      for (auto id : ids) updates.push_back(random_update(id, layout, 2, rng));
      const Vector brute = oracle::weighted_mean(updates);
      const ServerState s1 = aggregate(updates, prev);
      for (std::size_t i = 0; i < brute.size(); ++i) {
        CHECK(std::abs(s1.theta.values[i] - brute[i]) <= 1e-12 * std::max(1.0, std::abs(brute[i])));
      }
      std::shuffle(updates.begin(), updates.end(), rng);
      const ServerState s2 = aggregate(updates, prev);
      CHECK(s1.theta.values == s2.theta.values);
      CHECK(s1.class_embeddings == s2.class_embeddings);
    }
  }

  TEST_CASE("spreadout step leaves well-separated rows unchanged") {
    const Layout layout({2, 3});
    ServerState s = ServerState::initial(ParamVector(layout), {0, 1, 2}, 3, 1, {});
    s.class_embeddings = oracle::rows_to_matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    s.has_embedding = {true, true, true};
    CHECK(server_spreadout_step(s).class_embeddings == s.class_embeddings);
  }

  TEST_CASE("spreadout step pushes near-identical rows apart") {
    const Layout layout({2, 2});
    ServerState s = ServerState::initial(ParamVector(layout), {0, 1}, 2, 1, {});
    const Vector a = oracle::unit({1, 1e-3});
    const Vector b = oracle::unit({1, -1e-3});
    s.class_embeddings = oracle::rows_to_matrix({a, b});
    s.has_embedding = {true, true};
    const double before = oracle::dotp(a, b);
    const ServerState next = server_spreadout_step(s);
    const Vector a1(next.class_embeddings.row(0).begin(), next.class_embeddings.row(0).end());
    const Vector b1(next.class_embeddings.row(1).begin(), next.class_embeddings.row(1).end());
    CHECK(oracle::dotp(a1, b1) < before);
  }

  TEST_CASE("spreadout step matches a scalar gradient step then normalization") {
    const Layout layout({2, 3});
    SpreadoutConfig cfg;
    cfg.lambda_weight = 0.1;
    cfg.step_size = 1.0;
    ServerState s = ServerState::initial(ParamVector(layout), {0, 1, 2}, 3, 1, cfg);
    const std::vector<Vector> w{oracle::unit({1, 0.2, 0}), oracle::unit({0.8, 0.5, 0.1}),
                                oracle::unit({0.1, 1, 0.3})};
    s.class_embeddings = oracle::rows_to_matrix(w);
    s.has_embedding = {true, true, true};
    // d/dw_a of sum over ordered pairs of max(0, v - 1 + w_a.w_b)^2 with v = 1:
    // each unordered pair appears twice, so 4 max(0, w_a.w_b) w_b per partner.
    const ServerState next = server_spreadout_step(s);
    for (std::size_t a = 0; a < 3; ++a) {
      Vector g(3, 0.0);
      for (std::size_t b = 0; b < 3; ++b) {
        if (a == b) continue;
        const double h = std::max(0.0, oracle::dotp(w[a], w[b]));
        for (int k = 0; k < 3; ++k) g[k] += 4 * h * w[b][k];
      }
      Vector moved(3);
      for (int k = 0; k < 3; ++k) moved[k] = w[a][k] - 0.1 * g[k];
      const Vector expect = oracle::unit(moved);
      for (int k = 0; k < 3; ++k) CHECK(std::abs(next.class_embeddings(a, k) - expect[k]) < 1e-12);
    }
  }

  TEST_CASE("spreadout step with one known row warns and does nothing") {
    const Layout layout({2, 2});
    ServerState s = ServerState::initial(ParamVector(layout), {0, 1}, 2, 1, {});
    s.class_embeddings = oracle::rows_to_matrix({{1, 0}, {0, 0}});
    s.has_embedding = {true, false};
    std::string warned;
    set_log_sink([&](std::string_view m) { warned = m; });
    const ServerState next = server_spreadout_step(s);
    set_log_sink({});
    CHECK(next.class_embeddings == s.class_embeddings);
    CHECK(!warned.empty());
  }

  TEST_CASE("zero rounds return theta_0") {
    const Toy t = make_toy(4, 1);
    InProcessTransport tr(nodes_for(t, 0.1));
    ServerState s = ServerState::initial(flatten(t.net), ids_of(t), 3, 0, {});
    CHECK(run_fedface(s, tr, 0) == flatten(t.net));
    ServerState s2 = ServerState::initial(flatten(t.net), ids_of(t), 3, 0, {});
    CHECK(run_fedavg_baseline(s2, tr, 0) == flatten(t.net));
  }

  TEST_CASE("identical clients produce identical updates every round") {
    std::mt19937_64 rng(3);
    const Layout layout({4, 5, 3});
    const EmbeddingNet net = EmbeddingNet::glorot(layout, rng);
    ClientDataset a = random_dataset(1, 4, 4, rng);
    ClientDataset b = a;
    b.identity = 2;
    for (auto& smp : b.samples) smp.identity = 2;
    std::vector<ClientNode> nodes{ClientNode(make_client(a, layout, 0.1, 2)),
                                  ClientNode(make_client(b, layout, 0.1, 2))};
    InProcessTransport inner(nodes);
    RecordingTransport tr(inner);
    ServerState s = ServerState::initial(flatten(net), {1, 2}, 3, 0, {});
    run_fedface(s, tr, 5);
    REQUIRE(tr.log.size() == 5);
    for (const auto& replies : tr.log) {
      REQUIRE(replies.size() == 2);
      CHECK(replies[0].payload == replies[1].payload);
    }
    CHECK(s.class_embeddings.row(0)[0] == s.class_embeddings.row(1)[0]);
  }

  TEST_CASE("seeded in-process runs are bit-identical") {
    auto run = [] {
      const Toy t = make_toy(8, 5);
      InProcessTransport tr(nodes_for(t, 0.2));
      ServerState s = ServerState::initial(flatten(t.net), ids_of(t), 3, 0, {});
      run_fedface(s, tr, 6);
      return std::make_pair(s.theta, s.class_embeddings);
    };
    const auto a = run();
    const auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }

  TEST_CASE("class rows stay unit-norm after every round") {
    const Toy t = make_toy(6, 8);
    InProcessTransport tr(nodes_for(t, 0.5));
    SpreadoutConfig sp;
    sp.step_size = 0.01;
    ServerState s = ServerState::initial(flatten(t.net), ids_of(t), 3, 0, sp);
    int rounds = 0;
    run_fedface(s, tr, 8, [&](const ServerState& st, const RoundReport&) {
      ++rounds;
      for (std::size_t r = 0; r < st.client_ids.size(); ++r) {
        CHECK(std::abs(norm2(st.class_embeddings.row(r)) - 1.0) < 1e-9);
      }
    });
    CHECK(rounds == 8);
  }

  TEST_CASE("with lambda = 0 the spreadout run equals the baseline") {
    const Toy t = make_toy(5, 2);
    SpreadoutConfig sp;
    sp.lambda_weight = 0.0;
    InProcessTransport t1(nodes_for(t, 0.3));
    InProcessTransport t2(nodes_for(t, 0.3));
    ServerState s1 = ServerState::initial(flatten(t.net), ids_of(t), 3, 0, sp);
    ServerState s2 = ServerState::initial(flatten(t.net), ids_of(t), 3, 0, sp);
    run_fedface(s1, t1, 6);
    run_fedavg_baseline(s2, t2, 6);
    CHECK(s1.theta == s2.theta);
    CHECK(s1.class_embeddings == s2.class_embeddings);
  }

  TEST_CASE("a single client follows centralized positive-only SGD") {
    const Toy t = make_toy(1, 4);
    const ClientState st = make_client(t.clients[0], t.layout, 0.3, 2);
    InProcessTransport tr({ClientNode(st)});
    ServerState s = ServerState::initial(flatten(t.net), ids_of(t), 3, 0, {});
    run_fedavg_baseline(s, tr, 4);

    Model m;
    m.net = t.net;
    const Vector w0 = mean_feature_init(t.net, t.clients[0]);
    m.class_embeddings = oracle::rows_to_matrix({w0});
    m.class_ids = {st.client_id};
    for (std::uint32_t r = 0; r < 4; ++r) {
      SgdConfig sgd;
      sgd.learning_rate = 0.3;
      sgd.epochs = 2;
      sgd.shuffle_seed = derive_seed(st.seed, st.client_id, r);
      train_positive_only(m, t.clients, st.train.pos, sgd);
    }
    CHECK(s.theta == flatten(m.net));
    CHECK(Vector(s.class_embeddings.row(0).begin(), s.class_embeddings.row(0).end()) ==
          Vector(m.class_embeddings.row(0).begin(), m.class_embeddings.row(0).end()));
  }

  TEST_CASE("positive-only training collapses the class rows; spreadout prevents it") {
    const RunConfig cfg = load_config(std::string(FEDFACE_SOURCE_DIR) + "/configs/collapse.json");
    const Splits splits = make_splits(generate_data(cfg), cfg);
    const Model pre = pretrain_model(cfg, splits.pretrain);
    const Model flat = federate_in_process(cfg, Method::NoSpreadout, pre.net, splits.federated);
    const Model spread = federate_in_process(cfg, Method::FedFace, pre.net, splits.federated);
    CHECK(mean_similarity(flat.class_embeddings) > 0.99);
    CHECK(mean_similarity(spread.class_embeddings) < 0.5);
  }

  TEST_CASE("multi-client FedAvg with one client is centralized training") {
    std::mt19937_64 rng(6);
    std::vector<ClientDataset> pool;
    for (std::uint32_t i = 0; i < 6; ++i) pool.push_back(random_dataset(i, 4, 5, rng));
    Model start;
    start.net = EmbeddingNet::glorot(Layout({5, 6, 3}), rng);
    std::vector<Vector> rows;
    for (std::uint32_t i = 0; i < 6; ++i) {
      rows.push_back(oracle::random_unit(3, rng));
      start.class_ids.push_back(i);
    }
    start.class_embeddings = oracle::rows_to_matrix(rows);
    MultiClientConfig mc;
    mc.sgd.learning_rate = 0.05;
    mc.sgd.epochs = 2;
    mc.sgd.shuffle_seed = 4;
    const auto partition = partition_identities(pool, 1, 9);
    const Model fed = run_multiclient_fedavg(partition, start, mc, 3);

    Model central = start;
    for (std::uint32_t r = 0; r < 3; ++r) {
      SgdConfig sgd = mc.sgd;
      sgd.shuffle_seed = derive_seed(mc.sgd.shuffle_seed, 0, r);
      train_am_softmax(central, partition[0], mc.am, sgd);
    }
    const auto a = fed.net.params();
    const auto b = central.net.params();
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
    for (std::size_t i = 0; i < fed.class_embeddings.data().size(); ++i) {
      CHECK(std::abs(fed.class_embeddings.data()[i] - central.class_embeddings.data()[i]) < 1e-9);
    }
  }

  TEST_CASE("multi-client FedAvg rejects identities shared between clients") {
    std::mt19937_64 rng(6);
    std::vector<ClientDataset> pool;
    for (std::uint32_t i = 0; i < 3; ++i) pool.push_back(random_dataset(i, 3, 4, rng));
    Model start;
    start.net = EmbeddingNet::glorot(Layout({4, 3}), rng);
    start.class_embeddings = oracle::rows_to_matrix({oracle::random_unit(3, rng),
                                                     oracle::random_unit(3, rng),
                                                     oracle::random_unit(3, rng)});
    start.class_ids = {0, 1, 2};
    const std::vector<std::vector<ClientDataset>> overlap{{pool[0], pool[1]}, {pool[1], pool[2]}};
    CHECK_THROWS_AS(run_multiclient_fedavg(overlap, start, {}, 1), ConfigError);
  }

  TEST_CASE("partition_identities is disjoint and balanced") {
    std::mt19937_64 rng(1);
    std::vector<ClientDataset> pool;
    for (std::uint32_t i = 0; i < 50; ++i) pool.push_back(random_dataset(i, 1, 2, rng));
    for (std::size_t k : {1u, 4u, 16u}) {
      const auto parts = partition_identities(pool, k, 3);
      CHECK(parts.size() == k);
      std::set<std::uint32_t> seen;
      std::size_t lo = 1000, hi = 0;
      for (const auto& p : parts) {
        lo = std::min(lo, p.size());
        hi = std::max(hi, p.size());
        for (const auto& ds : p) CHECK(seen.insert(ds.identity).second);
      }
      CHECK(seen.size() == 50);
      CHECK(hi - lo <= 1);
    }
    CHECK_THROWS_AS(partition_identities(pool, 51, 3), ConfigError);
  }
}
