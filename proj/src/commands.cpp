#include "fedface/commands.hpp"

#include <chrono>
#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <thread>

#include "fedface/log.hpp"
#include "fedface/transport.hpp"

namespace fedface {
namespace {

using Clock = std::chrono::steady_clock;

std::vector<ClientDataset> load_data(const RunConfig& cfg, const std::string& path) {
  auto datasets = read_datasets(path);
  for (const auto& ds : datasets) {
    if (ds.samples.front().features.size() != cfg.input_dim) {
      throw ConfigError("dataset input_dim does not match data.input_dim");
    }
  }
  return datasets;
}

std::string far_key(double level) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "tar@%g", level);
  return buf;
}

std::chrono::milliseconds tcp_timeout(const RunConfig& cfg) {
  if (cfg.timeout_ms > 0.0) {
    return std::chrono::milliseconds(static_cast<std::int64_t>(cfg.timeout_ms));
  }
  return std::chrono::seconds(30);
}

// Mean positive loss over every sample of every client whose row the server
// knows, under the server's current theta and W. A harness diagnostic only.
double mean_positive_loss(const EmbeddingNet& net, const ServerState& server,
                          const std::vector<ClientDataset>& clients, const PosLossConfig& pos) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ds : clients) {
    const std::size_t row = server.row_of(ds.identity);
    if (!server.has_embedding[row]) continue;
    const auto w = server.class_embeddings.row(row);
    for (const auto& s : ds.samples) {
      total += pos_loss(l2_normalize(forward(net, s.features)), w, pos).loss;
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

class Stopwatch {
 public:
  explicit Stopwatch(bool enabled) : enabled_(enabled), start_(Clock::now()) {}

  void add_to(MetricsRecord& rec) const {
    if (!enabled_) return;
    const std::chrono::duration<double, std::milli> ms = Clock::now() - start_;
    rec.add("wall_ms", ms.count());
  }

 private:
  bool enabled_;
  Clock::time_point start_;
};

}  // namespace

void add_report_fields(MetricsRecord& record, const VerificationReport& report) {
  record.add("accuracy", report.accuracy_at_best).add("threshold", report.best_threshold);
  for (const auto& [level, tar] : report.tar_at_far) record.add(far_key(level), tar);
}

Model merge_class_rows(const Model& base, const EmbeddingNet& net, const Matrix& rows,
                       const std::vector<std::uint32_t>& ids) {
  if (rows.rows() != ids.size()) throw ShapeError("merge_class_rows: row/id count mismatch");
  if (!ids.empty() && rows.cols() != net.output_dim()) {
    throw ShapeError("merge_class_rows: class rows do not match the embedding dim");
  }
  std::vector<Vector> merged;
  std::vector<std::uint32_t> merged_ids = base.class_ids;
  std::map<std::uint32_t, std::size_t> index;
  for (std::size_t r = 0; r < base.class_ids.size(); ++r) {
    const auto row = base.class_embeddings.row(r);
    merged.emplace_back(row.begin(), row.end());
    index[base.class_ids[r]] = r;
  }
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto row = rows.row(k);
    auto it = index.find(ids[k]);
    if (it != index.end()) {
      merged[it->second].assign(row.begin(), row.end());
    } else {
      index[ids[k]] = merged.size();
      merged.emplace_back(row.begin(), row.end());
      merged_ids.push_back(ids[k]);
    }
  }
  Model out;
  out.net = net;
  out.class_embeddings = merged.empty() ? base.class_embeddings : Matrix::from_rows(merged);
  out.class_ids = std::move(merged_ids);
  return out;
}

void cmd_gen_data(const RunConfig& cfg, const std::string& out_data) {
  write_datasets(out_data, generate_data(cfg));
}

void cmd_make_pairs(const RunConfig& cfg, const std::string& data, const std::string& out_pairs) {
  const Splits splits = make_splits(load_data(cfg, data), cfg);
  write_pairs(out_pairs, eval_pairs(splits, cfg));
}

void cmd_pretrain(const RunConfig& cfg, const std::string& data, const std::string& out_model,
                  MetricsWriter& metrics) {
  const Stopwatch clock(cfg.record_wall_clock);
  const Splits splits = make_splits(load_data(cfg, data), cfg);
  TrainStats stats;
  const Model model = pretrain_model(cfg, splits.pretrain, &stats);
  write_model(out_model, model);

  MetricsRecord rec;
  rec.add("stage", "pretrain")
      .add("round", static_cast<std::uint64_t>(cfg.pretrain.epochs))
      .add("steps", static_cast<std::uint64_t>(stats.steps))
      .add("loss", stats.mean_loss);
  add_report_fields(rec, evaluate(model.net, eval_pairs(splits, cfg), cfg));
  clock.add_to(rec);
  metrics.write(rec);
}

void cmd_federate(const RunConfig& cfg, Method method, const std::string& data,
                  const std::string& in_model, const std::string& out_model,
                  MetricsWriter& metrics) {
  const Stopwatch clock(cfg.record_wall_clock);
  const Splits splits = make_splits(load_data(cfg, data), cfg);
  const Model input = read_model(in_model);
  if (input.net.layout() != Layout(cfg.layer_dims())) {
    throw ConfigError("model layout does not match the config's layer dims");
  }
  const PairProtocol pairs = eval_pairs(splits, cfg);
  const std::string name = method_name(method);

  const RoundObserver observer = [&](const ServerState& s, const RoundReport& r) {
    const EmbeddingNet net = unflatten(s.theta, input.net.layout());
    MetricsRecord rec;
    rec.add("stage", "federate")
        .add("method", name)
        .add("round", r.round)
        .add("reported", static_cast<std::uint64_t>(r.reported.size()))
        .add("excluded", static_cast<std::uint64_t>(r.excluded.size()))
        .add("pos_loss", mean_positive_loss(net, s, splits.federated, cfg.local.pos))
        .add("spreadout_before", r.spreadout_before)
        .add("spreadout_after", r.spreadout_after);
    const Matrix known = s.known_embeddings();
    if (known.rows() >= 2) {
      const SeparationReport sep = separation(known, net, {});
      rec.add("sep_mean", sep.mean_pairwise)
          .add("sep_min", sep.min_pairwise)
          .add("sep_max", sep.max_pairwise);
    }
    if (cfg.eval_every > 0 && (r.round % cfg.eval_every == 0 || r.round == s.total_rounds)) {
      add_report_fields(rec, evaluate(net, pairs, cfg));
    }
    clock.add_to(rec);
    metrics.write(rec);
  };

  Model fed;
  if (cfg.transport == "tcp") {
    TcpServerTransport transport(cfg.host, cfg.port, tcp_timeout(cfg));
    std::cout << "listening port=" << transport.port() << std::endl;
    std::vector<std::uint32_t> ids;
    for (const auto& ds : splits.federated) ids.push_back(ds.identity);
    const auto joined = transport.accept_clients(ids, tcp_timeout(cfg));
    if (joined.size() < ids.size()) {
      log_warning(std::to_string(ids.size() - joined.size()) +
                  " clients did not register before the deadline");
    }
    fed = federate(cfg, method, input.net, splits.federated, transport, observer);
  } else {
    fed = federate_in_process(cfg, method, input.net, splits.federated, observer);
  }
  write_model(out_model, merge_class_rows(input, fed.net, fed.class_embeddings, fed.class_ids));
}

void cmd_join(const RunConfig& cfg, Method method, const std::string& data,
              const std::string& host, std::uint16_t port,
              const std::vector<std::uint32_t>& client_ids) {
  const Splits splits = make_splits(load_data(cfg, data), cfg);
  auto nodes = make_client_nodes(cfg, method, Layout(cfg.layer_dims()), splits.federated);
  if (!client_ids.empty()) {
    std::vector<ClientNode> chosen;
    for (auto id : client_ids) {
      auto it = std::find_if(nodes.begin(), nodes.end(),
                             [id](const ClientNode& n) { return n.client_id() == id; });
      if (it == nodes.end()) throw ConfigError("no federated client " + std::to_string(id));
      chosen.push_back(*it);
    }
    nodes = std::move(chosen);
  }

  std::vector<std::exception_ptr> errors(nodes.size());
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    threads.emplace_back([&, k] {
      try {
        run_tcp_client(host, port, nodes[k], tcp_timeout(cfg));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void cmd_finetune(const RunConfig& cfg, const std::string& data, const std::string& in_model,
                  const std::string& out_model, MetricsWriter& metrics) {
  const Stopwatch clock(cfg.record_wall_clock);
  const Splits splits = make_splits(load_data(cfg, data), cfg);
  const Model input = read_model(in_model);
  if (input.net.layout() != Layout(cfg.layer_dims())) {
    throw ConfigError("model layout does not match the config's layer dims");
  }
  TrainStats stats;
  const Model ft = centralized_finetune(cfg, input.net, splits.federated, &stats);
  write_model(out_model, merge_class_rows(input, ft.net, ft.class_embeddings, ft.class_ids));

  MetricsRecord rec;
  rec.add("stage", "finetune")
      .add("round", static_cast<std::uint64_t>(cfg.finetune.epochs))
      .add("steps", static_cast<std::uint64_t>(stats.steps))
      .add("loss", stats.mean_loss);
  add_report_fields(rec, evaluate(ft.net, eval_pairs(splits, cfg), cfg));
  clock.add_to(rec);
  metrics.write(rec);
}

std::vector<SweepResult> cmd_client_sweep(const RunConfig& cfg, const std::string& data,
                                          MetricsWriter& metrics) {
  const Stopwatch clock(cfg.record_wall_clock);
  const Splits splits = make_splits(load_data(cfg, data), cfg);
  const auto results = client_sweep(cfg, splits, eval_pairs(splits, cfg));
  for (const auto& r : results) {
    MetricsRecord rec;
    rec.add("stage", "sweep")
        .add("clients", static_cast<std::uint64_t>(r.num_clients))
        .add("round", cfg.sweep_rounds);
    add_report_fields(rec, r.report);
    clock.add_to(rec);
    metrics.write(rec);
  }
  return results;
}

VerificationReport cmd_eval(const std::string& model, const std::string& pairs,
                            const std::vector<double>& far_levels) {
  const Model m = read_model(model);
  const PairProtocol p = read_pairs(pairs);
  if (p.pairs.front().a.size() != m.net.input_dim()) {
    throw ConfigError("pairs input_dim does not match the model");
  }
  return roc_and_tar(score_pairs(m.net, p), far_levels);
}

}  // namespace fedface
