#include "fedface/config.hpp"

#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace fedface {

namespace {

using nlohmann::json;

// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError(name_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(name_ + "." + key + ": wrong type");
    }
  }

  void get_distance(const char* key, Distance& out) {
    std::string s = out == Distance::Cosine ? "cosine" : "squared_euclidean";
    get(key, s);
    if (s == "cosine") {
      out = Distance::Cosine;
    } else if (s == "squared_euclidean") {
      out = Distance::SquaredEuclidean;
    } else {
      throw ConfigError(name_ + "." + key + ": unknown distance '" + s + "'");
    }
  }

  std::optional<Section> child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key)) return std::nullopt;
    return Section(j_.at(key), name_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, _] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(name_ + ": unknown key '" + k + "'");
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_sgd(Section& s, SgdConfig& sgd, const char* epochs_key) {
  s.get("lr", sgd.learning_rate);
  s.get("momentum", sgd.momentum);
  s.get(epochs_key, sgd.epochs);
  s.get("batch_size", sgd.batch_size);
}

json sgd_json(const SgdConfig& sgd, const char* epochs_key) {
  return {{"lr", sgd.learning_rate},
          {"momentum", sgd.momentum},
          {epochs_key, sgd.epochs},
          {"batch_size", sgd.batch_size}};
}

const char* distance_name(Distance d) {
  return d == Distance::Cosine ? "cosine" : "squared_euclidean";
}

}  // namespace

std::vector<std::size_t> RunConfig::layer_dims() const {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(embedding_dim);
  return dims;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec spec;
  spec.num_identities = total_identities();
  spec.min_samples = min_samples;
  spec.max_samples = max_samples;
  spec.input_dim = input_dim;
  spec.noise_sigma = noise_sigma;
  spec.seed = derive_seed(seed, 1);
  return spec;
}

void RunConfig::validate() const {
  if (pretrain_identities < 2) throw ConfigError("data.pretrain_identities must be at least 2");
  if (federated_identities < 1) throw ConfigError("data.federated_identities must be positive");
  if (eval_identities < 2) throw ConfigError("data.eval_identities must be at least 2");
  synthetic_spec().validate();
  if (embedding_dim < 2) throw ConfigError("model.embedding_dim must be at least 2");
  for (auto h : hidden_dims) {
    if (h == 0) throw ConfigError("model.hidden_dims entries must be positive");
  }
  am.validate();
  pretrain.validate();
  local.validate();
  spreadout.validate();
  full.validate();
  finetune.validate();
  sweep.validate();
  if (client_counts.empty()) throw ConfigError("sweep.client_counts must not be empty");
  for (auto k : client_counts) {
    if (k == 0 || k > pretrain_identities + federated_identities) {
      throw ConfigError("sweep.client_counts entries must lie in [1, training identities]");
    }
  }
  if (num_genuine == 0 || num_impostor == 0) {
    throw ConfigError("eval.num_genuine and eval.num_impostor must be positive");
  }
  for (double f : far_levels) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("eval.far_levels entries must lie in (0, 1]");
  }
  if (transport != "inprocess" && transport != "tcp") {
    throw ConfigError("transport.kind must be 'inprocess' or 'tcp'");
  }
  if (!(timeout_ms >= 0.0) || !std::isfinite(timeout_ms)) {
    throw ConfigError("transport.timeout_ms must be finite and nonnegative");
  }
  if (workers == 0) throw ConfigError("transport.workers must be positive");
}

RunConfig config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg;
  Section root(j, "config");
  if (!j.is_object() || !j.contains("seed")) throw ConfigError("config: 'seed' is required");
  root.get("experiment", cfg.experiment);
  root.get("seed", cfg.seed);
  root.get("record_wall_clock", cfg.record_wall_clock);

  if (auto s = root.child("data")) {
    s->get("pretrain_identities", cfg.pretrain_identities);
    s->get("federated_identities", cfg.federated_identities);
    s->get("eval_identities", cfg.eval_identities);
    s->get("min_samples", cfg.min_samples);
    s->get("max_samples", cfg.max_samples);
    s->get("input_dim", cfg.input_dim);
    s->get("noise_sigma", cfg.noise_sigma);
    s->finish();
  }
  if (auto s = root.child("model")) {
    s->get("hidden_dims", cfg.hidden_dims);
    s->get("embedding_dim", cfg.embedding_dim);
    s->finish();
  }
  if (auto s = root.child("pretrain")) {
    s->get("scale", cfg.am.scale);
    s->get("margin", cfg.am.margin);
    read_sgd(*s, cfg.pretrain, "epochs");
    s->finish();
  }
  if (auto s = root.child("federated")) {
    s->get("lr", cfg.local.learning_rate);
    s->get("momentum", cfg.local.momentum);
    s->get("local_epochs", cfg.local.local_epochs);
    s->get("batch_size", cfg.local.batch_size);
    s->get("m_margin", cfg.local.pos.m_margin);
    s->get("lambda", cfg.spreadout.lambda_weight);
    s->get("v_margin", cfg.spreadout.v_margin);
    s->get("server_lr", cfg.spreadout.step_size);
    s->get_distance("distance", cfg.spreadout.distance);
    s->get("rounds", cfg.rounds);
    s->finish();
  }
  if (auto s = root.child("finetune")) {
    s->get("alpha", cfg.full.alpha);
    s->get("beta", cfg.full.beta);
    s->get("v_margin", cfg.full.v_margin);
    s->get_distance("distance", cfg.full.distance);
    read_sgd(*s, cfg.finetune, "epochs");
    s->finish();
  }
  if (auto s = root.child("sweep")) {
    s->get("client_counts", cfg.client_counts);
    s->get("rounds", cfg.sweep_rounds);
    read_sgd(*s, cfg.sweep, "local_epochs");
    s->finish();
  }
  if (auto s = root.child("eval")) {
    s->get("num_genuine", cfg.num_genuine);
    s->get("num_impostor", cfg.num_impostor);
    s->get("far_levels", cfg.far_levels);
    s->get("every", cfg.eval_every);
    s->finish();
  }
  if (auto s = root.child("transport")) {
    s->get("kind", cfg.transport);
    s->get("timeout_ms", cfg.timeout_ms);
    s->get("workers", cfg.workers);
    s->get("host", cfg.host);
    s->get("port", cfg.port);
    s->finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const RunConfig& cfg) {
  json j;
  j["experiment"] = cfg.experiment;
  j["seed"] = cfg.seed;
  j["record_wall_clock"] = cfg.record_wall_clock;
  j["data"] = {{"pretrain_identities", cfg.pretrain_identities},
               {"federated_identities", cfg.federated_identities},
               {"eval_identities", cfg.eval_identities},
               {"min_samples", cfg.min_samples},
               {"max_samples", cfg.max_samples},
               {"input_dim", cfg.input_dim},
               {"noise_sigma", cfg.noise_sigma}};
  j["model"] = {{"hidden_dims", cfg.hidden_dims}, {"embedding_dim", cfg.embedding_dim}};
  j["pretrain"] = sgd_json(cfg.pretrain, "epochs");
  j["pretrain"]["scale"] = cfg.am.scale;
  j["pretrain"]["margin"] = cfg.am.margin;
  j["federated"] = {{"lr", cfg.local.learning_rate},
                    {"momentum", cfg.local.momentum},
                    {"local_epochs", cfg.local.local_epochs},
                    {"batch_size", cfg.local.batch_size},
                    {"m_margin", cfg.local.pos.m_margin},
                    {"lambda", cfg.spreadout.lambda_weight},
                    {"v_margin", cfg.spreadout.v_margin},
                    {"server_lr", cfg.spreadout.step_size},
                    {"distance", distance_name(cfg.spreadout.distance)},
                    {"rounds", cfg.rounds}};
  j["finetune"] = sgd_json(cfg.finetune, "epochs");
  j["finetune"]["alpha"] = cfg.full.alpha;
  j["finetune"]["beta"] = cfg.full.beta;
  j["finetune"]["v_margin"] = cfg.full.v_margin;
  j["finetune"]["distance"] = distance_name(cfg.full.distance);
  j["sweep"] = sgd_json(cfg.sweep, "local_epochs");
  j["sweep"]["client_counts"] = cfg.client_counts;
  j["sweep"]["rounds"] = cfg.sweep_rounds;
  j["eval"] = {{"num_genuine", cfg.num_genuine},
               {"num_impostor", cfg.num_impostor},
               {"far_levels", cfg.far_levels},
               {"every", cfg.eval_every}};
  j["transport"] = {{"kind", cfg.transport},
                    {"timeout_ms", cfg.timeout_ms},
                    {"workers", cfg.workers},
                    {"host", cfg.host},
                    {"port", cfg.port}};
  return j.dump(2);
}

}  // namespace fedface
