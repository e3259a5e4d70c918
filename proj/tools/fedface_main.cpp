#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedface/commands.hpp"

namespace {

using namespace fedface;

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const DecodeError*>(&e)) return "decode";
  if (dynamic_cast<const TransportError*>(&e)) return "transport";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const LayoutError*>(&e)) return "layout";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "non_finite";
  if (dynamic_cast<const DegenerateEmbeddingError*>(&e)) return "degenerate_embedding";
  if (dynamic_cast<const CapacityError*>(&e)) return "capacity";
  if (dynamic_cast<const NotEnoughClassesError*>(&e)) return "not_enough_classes";
  if (dynamic_cast<const UnitNormError*>(&e)) return "unit_norm";
  if (dynamic_cast<const Error*>(&e)) return "fedface";
  return "internal";
}

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

struct MethodFlags {
  bool no_spreadout = false;
  bool random_init = false;
  bool fedavg = false;
  bool random_trainable = false;

  void attach(CLI::App* app) {
    auto* a = app->add_flag("--no-spreadout", no_spreadout, "mean-feature init, no spreadout step");
    auto* b = app->add_flag("--random-init", random_init, "fixed random class embeddings");
    auto* c = app->add_flag("--fedavg", fedavg, "random trainable class embeddings, no spreadout");
    auto* d = app->add_flag("--random-trainable-init", random_trainable,
                            "random trainable class embeddings with spreadout");
    a->excludes(b)->excludes(c)->excludes(d);
    b->excludes(c)->excludes(d);
    c->excludes(d);
  }

  Method method() const {
    if (no_spreadout) return Method::NoSpreadout;
    if (random_init) return Method::RandomFixed;
    if (fedavg) return Method::FedAvg;
    if (random_trainable) return Method::RandomTrainable;
    return Method::FedFace;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated embedding learning with one identity per client"};
  app.require_subcommand(1);

  std::string config, data, model, out, pairs, metrics = "-", transport, host;
  int rounds = -1;
  int port = -1;
  std::vector<std::uint32_t> client_ids;
  std::vector<double> far_levels;
  MethodFlags flags;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset file");
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out)->required();

  auto* mk = app.add_subcommand("make-pairs", "write the held-out verification pairs");
  mk->add_option("--config", config)->required();
  mk->add_option("--data", data)->required();
  mk->add_option("--out", out)->required();

  auto* pre = app.add_subcommand("pretrain", "centralized AM-softmax pretraining");
  pre->add_option("--config", config)->required();
  pre->add_option("--data", data)->required();
  pre->add_option("--out", out)->required();
  pre->add_option("--metrics", metrics, "metrics file, '-' for stdout");

  auto* fed = app.add_subcommand("federate", "federated training over the client split");
  fed->add_option("--config", config)->required();
  fed->add_option("--data", data)->required();
  fed->add_option("--model", model)->required();
  fed->add_option("--out", out)->required();
  fed->add_option("--metrics", metrics, "metrics file, '-' for stdout");
  fed->add_option("--rounds", rounds, "override federated.rounds")->check(CLI::NonNegativeNumber);
  fed->add_option("--transport", transport, "inprocess or tcp")
      ->check(CLI::IsMember({"inprocess", "tcp"}));
  fed->add_option("--host", host, "tcp bind address");
  fed->add_option("--port", port, "tcp port, 0 picks one")->check(CLI::Range(0, 65535));
  flags.attach(fed);

  auto* join = app.add_subcommand("join", "run federated clients against a tcp server");
  join->add_option("--config", config)->required();
  join->add_option("--data", data)->required();
  join->add_option("--host", host, "server address");
  join->add_option("--port", port, "server port")->required()->check(CLI::Range(1, 65535));
  join->add_option("--client", client_ids, "client ids to run (default: all)");
  flags.attach(join);

  auto* ft = app.add_subcommand("finetune", "centralized full-loss fine-tuning baseline");
  ft->add_option("--config", config)->required();
  ft->add_option("--data", data)->required();
  ft->add_option("--model", model)->required();
  ft->add_option("--out", out)->required();
  ft->add_option("--metrics", metrics, "metrics file, '-' for stdout");

  auto* sweep = app.add_subcommand("client-sweep", "multi-identity FedAvg over client counts");
  sweep->add_option("--config", config)->required();
  sweep->add_option("--data", data)->required();
  sweep->add_option("--metrics", metrics, "metrics file, '-' for stdout");

  auto* ev = app.add_subcommand("eval", "verification report of a model on a pairs file");
  ev->add_option("--model", model)->required();
  ev->add_option("--pairs", pairs)->required();
  ev->add_option("--far", far_levels, "FAR levels (default 0.001 0.01 0.1)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto load = [&] {
      RunConfig cfg = load_config(config);
      if (rounds >= 0) cfg.rounds = static_cast<std::uint32_t>(rounds);
      if (!transport.empty()) cfg.transport = transport;
      if (!host.empty()) cfg.host = host;
      if (port >= 0) cfg.port = static_cast<std::uint16_t>(port);
      cfg.validate();
      return cfg;
    };

    if (*gen) {
      cmd_gen_data(load(), out);
    } else if (*mk) {
      cmd_make_pairs(load(), data, out);
    } else if (*pre) {
      MetricsWriter w(metrics);
      cmd_pretrain(load(), data, out, w);
    } else if (*fed) {
      MetricsWriter w(metrics);
      cmd_federate(load(), flags.method(), data, model, out, w);
    } else if (*join) {
      const RunConfig cfg = load();
      cmd_join(cfg, flags.method(), data, cfg.host, cfg.port, client_ids);
    } else if (*ft) {
      MetricsWriter w(metrics);
      cmd_finetune(load(), data, model, out, w);
    } else if (*sweep) {
      MetricsWriter w(metrics);
      cmd_client_sweep(load(), data, w);
    } else if (*ev) {
      if (far_levels.empty()) far_levels = RunConfig{}.far_levels;
      MetricsRecord rec;
      const auto report = cmd_eval(model, pairs, far_levels);
      rec.add("stage", "eval")
          .add("genuine", static_cast<std::uint64_t>(report.num_genuine))
          .add("impostor", static_cast<std::uint64_t>(report.num_impostor));
      add_report_fields(rec, report);
      std::cout << rec.line() << std::endl;
    }
  } catch (const std::exception& e) {
    std::cerr << "error kind=" << error_kind(e) << " message=" << quoted(e.what()) << std::endl;
    return 1;
  }
  return 0;
}
