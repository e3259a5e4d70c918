#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedface/commands.hpp"
#include "fedface/config.hpp"
#include "fedface/eval.hpp"
#include "fedface/federation.hpp"
#include "fedface/losses.hpp"
#include "fedface/wire.hpp"

namespace py = pybind11;
using namespace fedface;

namespace {

Matrix to_matrix(const std::vector<Vector>& rows) {
  if (rows.empty()) throw ShapeError("expected at least one row");
  for (const auto& r : rows) {
    if (r.size() != rows.front().size()) throw ShapeError("rows have different lengths");
  }
  return Matrix::from_rows(rows);
}

std::vector<Vector> to_rows(const Matrix& m) {
  std::vector<Vector> out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row(r).begin(), m.row(r).end());
  return out;
}

Distance parse_distance(const std::string& name) {
  if (name == "cosine") return Distance::Cosine;
  if (name == "squared_euclidean") return Distance::SquaredEuclidean;
  throw ConfigError("unknown distance '" + name + "'");
}

py::dict report_dict(const VerificationReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy_at_best;
  d["threshold"] = r.best_threshold;
  d["tar_at_far"] = r.tar_at_far;
  d["num_genuine"] = r.num_genuine;
  d["num_impostor"] = r.num_impostor;
  return d;
}

RunConfig load(const std::string& path, std::optional<std::uint32_t> rounds) {
  RunConfig cfg = load_config(path);
  if (rounds) cfg.rounds = *rounds;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_fedface, m) {
  m.doc() = "Federated embedding learning with one identity per client";

  auto base = py::register_exception<Error>(m, "FedfaceError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<DecodeError>(m, "DecodeError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<UnitNormError>(m, "UnitNormError", base.ptr());
  py::register_exception<NotEnoughClassesError>(m, "NotEnoughClassesError", base.ptr());
  py::register_exception<TransportError>(m, "TransportError", base.ptr());

  m.def(
      "pos_loss",
      [](const Vector& f, const Vector& w, double m_margin) {
        const VectorLoss l = pos_loss(f, w, PosLossConfig{m_margin});
        return py::make_tuple(l.loss, l.grad_f, l.grad_w);
      },
      py::arg("f"), py::arg("w"), py::arg("m_margin") = 0.9,
      "max(0, m - w.f)^2 and its gradients for unit f, w.");

  m.def(
      "full_loss",
      [](const Vector& f, std::size_t y, const std::vector<Vector>& w, double alpha, double beta,
         double v_margin, const std::string& distance) {
        const FullLossConfig cfg{alpha, beta, v_margin, parse_distance(distance)};
        const MatrixLoss l = full_loss(f, y, to_matrix(w), cfg);
        return py::make_tuple(l.loss, l.grad_f, to_rows(l.grad_w));
      },
      py::arg("f"), py::arg("y"), py::arg("w"), py::arg("alpha") = 1.0, py::arg("beta") = 1.0,
      py::arg("v_margin") = 1.0, py::arg("distance") = "cosine");

  m.def(
      "spreadout",
      [](const std::vector<Vector>& w, double v_margin, const std::string& distance) {
        SpreadoutConfig cfg;
        cfg.v_margin = v_margin;
        cfg.distance = parse_distance(distance);
        const SpreadoutResult r = spreadout(to_matrix(w), cfg);
        return py::make_tuple(r.reg, to_rows(r.grad_w));
      },
      py::arg("w"), py::arg("v_margin") = 1.0, py::arg("distance") = "cosine");

  m.def(
      "am_softmax",
      [](const Vector& f, std::size_t y, const std::vector<Vector>& w, double scale,
         double margin) {
        const MatrixLoss l = am_softmax(f, y, to_matrix(w), AmSoftmaxConfig{scale, margin});
        return py::make_tuple(l.loss, l.grad_f, to_rows(l.grad_w));
      },
      py::arg("f"), py::arg("y"), py::arg("w"), py::arg("scale") = 30.0,
      py::arg("margin") = 0.35);

  m.def(
      "roc_and_tar",
      [](const std::vector<double>& scores, const std::vector<bool>& genuine,
         const std::vector<double>& far_levels) {
        if (scores.size() != genuine.size()) throw ShapeError("scores and labels differ in length");
        std::vector<ScoredPair> scored;
        for (std::size_t k = 0; k < scores.size(); ++k) scored.push_back({scores[k], genuine[k]});
        return report_dict(roc_and_tar(scored, far_levels));
      },
      py::arg("scores"), py::arg("genuine"),
      py::arg("far_levels") = std::vector<double>{0.001, 0.01, 0.1});

  m.def(
      "weighted_average",
      [](const std::vector<Vector>& thetas, const std::vector<std::uint64_t>& counts) {
        if (thetas.empty() || thetas.size() != counts.size()) {
          throw ShapeError("need one sample count per parameter vector");
        }
        const std::size_t p = thetas.front().size();
        const Layout flat({p, 1});  // p weights and one bias
        std::vector<std::uint32_t> ids;
        std::vector<ClientUpdate> updates;
        for (std::size_t k = 0; k < thetas.size(); ++k) {
          if (thetas[k].size() != p) throw ShapeError("parameter vectors differ in length");
          Vector v = thetas[k];
          v.push_back(0.0);
          const auto id = static_cast<std::uint32_t>(k);
          ids.push_back(id);
          updates.push_back({id, ParamVector(flat, std::move(v)), {1.0}, counts[k], 0.0});
        }
        const ServerState prev = ServerState::initial(ParamVector(flat), ids, 1, 1, {});
        Vector out = aggregate(updates, prev).theta.values;
        out.pop_back();
        return out;
      },
      py::arg("thetas"), py::arg("counts"),
      "Sample-count-weighted mean of parameter vectors, summed in index order.");

  m.def(
      "encode_frame",
      [](std::uint8_t type, std::uint32_t round, std::uint32_t client_id, const py::bytes& payload) {
        const std::string p = payload;
        WireMessage msg;
        if (type > static_cast<std::uint8_t>(MessageType::Error)) {
          throw ConfigError("unknown message type");
        }
        msg.type = static_cast<MessageType>(type);
        msg.round = round;
        msg.client_id = client_id;
        msg.payload.assign(p.begin(), p.end());
        const auto bytes = encode(msg);
        return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      },
      py::arg("type"), py::arg("round"), py::arg("client_id"), py::arg("payload") = py::bytes());

  m.def(
      "decode_frame",
      [](const py::bytes& frame) {
        const std::string s = frame;
        const WireMessage msg = decode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
        return py::make_tuple(static_cast<int>(msg.type), msg.round, msg.client_id,
                              py::bytes(reinterpret_cast<const char*>(msg.payload.data()),
                                        msg.payload.size()));
      },
      py::arg("frame"), "Returns (type, round, client_id, payload).");

  m.def("gen_data", [](const std::string& config, const std::string& out) {
    cmd_gen_data(load(config, std::nullopt), out);
  }, py::arg("config"), py::arg("out"));

  m.def("make_pairs", [](const std::string& config, const std::string& data, const std::string& out) {
    cmd_make_pairs(load(config, std::nullopt), data, out);
  }, py::arg("config"), py::arg("data"), py::arg("out"));

  m.def("pretrain", [](const std::string& config, const std::string& data, const std::string& out,
                       const std::string& metrics) {
    MetricsWriter w(metrics);
    cmd_pretrain(load(config, std::nullopt), data, out, w);
  }, py::arg("config"), py::arg("data"), py::arg("out"), py::arg("metrics") = "");

  m.def("federate", [](const std::string& config, const std::string& data, const std::string& model,
                       const std::string& out, const std::string& method,
                       std::optional<std::uint32_t> rounds, const std::string& metrics) {
    MetricsWriter w(metrics);
    cmd_federate(load(config, rounds), parse_method(method), data, model, out, w);
  }, py::arg("config"), py::arg("data"), py::arg("model"), py::arg("out"),
     py::arg("method") = "fedface", py::arg("rounds") = py::none(), py::arg("metrics") = "");

  m.def("finetune", [](const std::string& config, const std::string& data, const std::string& model,
                       const std::string& out, const std::string& metrics) {
    MetricsWriter w(metrics);
    cmd_finetune(load(config, std::nullopt), data, model, out, w);
  }, py::arg("config"), py::arg("data"), py::arg("model"), py::arg("out"), py::arg("metrics") = "");

  m.def("evaluate", [](const std::string& model, const std::string& pairs,
                       const std::vector<double>& far_levels) {
    return report_dict(cmd_eval(model, pairs, far_levels));
  }, py::arg("model"), py::arg("pairs"),
     py::arg("far_levels") = std::vector<double>{0.001, 0.01, 0.1});
}
