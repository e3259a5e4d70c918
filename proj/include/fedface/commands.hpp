#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedface/config.hpp"
#include "fedface/eval.hpp"
#include "fedface/experiments.hpp"
#include "fedface/io.hpp"

namespace fedface {

// File-level subcommands. Each one is a pure function of its config and
// input files; metrics go to `metrics` one record per line.

void cmd_gen_data(const RunConfig& cfg, const std::string& out_data);

void cmd_make_pairs(const RunConfig& cfg, const std::string& data, const std::string& out_pairs);

void cmd_pretrain(const RunConfig& cfg, const std::string& data, const std::string& out_model,
                  MetricsWriter& metrics);

// Federated training of the input model's feature extractor over the
// federated split. The output keeps the input's class rows and adds (or
// replaces) one row per client that reported; with zero rounds it is the
// input model unchanged.
void cmd_federate(const RunConfig& cfg, Method method, const std::string& data,
                  const std::string& in_model, const std::string& out_model,
                  MetricsWriter& metrics);

// Client side of a TCP federation: runs the given federated clients (all of
// them when `client_ids` is empty), one thread each, until the server ends
// the session.
void cmd_join(const RunConfig& cfg, Method method, const std::string& data,
              const std::string& host, std::uint16_t port,
              const std::vector<std::uint32_t>& client_ids);

void cmd_finetune(const RunConfig& cfg, const std::string& data, const std::string& in_model,
                  const std::string& out_model, MetricsWriter& metrics);

std::vector<SweepResult> cmd_client_sweep(const RunConfig& cfg, const std::string& data,
                                          MetricsWriter& metrics);

VerificationReport cmd_eval(const std::string& model, const std::string& pairs,
                            const std::vector<double>& far_levels);

// accuracy, threshold and one tar@<level> field per FAR level.
void add_report_fields(MetricsRecord& record, const VerificationReport& report);

// `base` with its net replaced by `net` and the class rows of `ids` set to
// `rows` (replacing existing rows, appending new ones in the given order).
Model merge_class_rows(const Model& base, const EmbeddingNet& net, const Matrix& rows,
                       const std::vector<std::uint32_t>& ids);

}  // namespace fedface
