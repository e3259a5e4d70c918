#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedface/data.hpp"
#include "fedface/training.hpp"

namespace fedface {

// Binary files share the wire format's conventions: little-endian u64
// counts and IEEE-754 binary64 values, no padding.
//
// Dataset file:
//   "FSD1" | u64 num_identities | u64 input_dim
//   then per identity: u64 identity | u64 n | n * input_dim f64 (row-major)
//
// Model file:
//   "FSM1" | u64 num_dims | num_dims * u64 dims | u64 param_count | param_count f64
//   | u64 C | u64 d | C * d f64 (row-major) | C * u64 class_ids
//
// Pairs file:
//   "FSP1" | u64 input_dim | u64 num_pairs
//   then per pair: u64 identity_a | u64 identity_b | u8 same_identity
//   | input_dim f64 (a) | input_dim f64 (b)

std::vector<std::uint8_t> encode_datasets(const std::vector<ClientDataset>& datasets);
std::vector<ClientDataset> decode_datasets(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_model(const Model& model);
Model decode_model(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_pairs(const PairProtocol& pairs);
PairProtocol decode_pairs(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

void write_datasets(const std::string& path, const std::vector<ClientDataset>& datasets);
std::vector<ClientDataset> read_datasets(const std::string& path);
void write_model(const std::string& path, const Model& model);
Model read_model(const std::string& path);
void write_pairs(const std::string& path, const PairProtocol& pairs);
PairProtocol read_pairs(const std::string& path);

// One line of space-separated key=value fields. Doubles are printed with
// %.17g so they round-trip exactly.
class MetricsRecord {
 public:
  MetricsRecord& add(std::string_view key, double value);
  MetricsRecord& add(std::string_view key, std::uint64_t value);
  MetricsRecord& add(std::string_view key, std::string_view value);
  MetricsRecord& add(std::string_view key, const char* value) {
    return add(key, std::string_view(value));
  }
  MetricsRecord& add(std::string_view key, unsigned value) {
    return add(key, static_cast<std::uint64_t>(value));
  }

  const std::string& line() const noexcept { return line_; }

 private:
  void key(std::string_view k);

  std::string line_;
};

std::string format_double(double x);

// Appends records to a file; "-" writes them to stdout and an empty path
// discards them.
class MetricsWriter {
 public:
  explicit MetricsWriter(std::string path = {});

  void write(const MetricsRecord& record);

 private:
  std::string path_;
};

}  // namespace fedface
