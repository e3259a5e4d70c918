#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "fedface/numerics.hpp"

namespace fedface {

struct IdentitySample {
  Vector features;
  std::uint32_t identity = 0;

  friend bool operator==(const IdentitySample&, const IdentitySample&) = default;
};

// All samples of one identity. In the federated setting this is exactly what
// a single client holds.
struct ClientDataset {
  std::uint32_t identity = 0;
  std::vector<IdentitySample> samples;

  std::size_t size() const noexcept { return samples.size(); }

  // Throws ConfigError if empty or if any sample carries another label.
  void validate() const;

  friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

struct SyntheticSpec {
  std::size_t num_identities = 50;
  std::size_t min_samples = 8;
  std::size_t max_samples = 16;
  std::size_t input_dim = 16;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Prototype pairs more similar than this are redrawn.
inline constexpr double kPrototypeMaxCosine = 0.95;
inline constexpr int kPrototypeMaxAttempts = 10000;

// One ClientDataset per identity; identity labels are 0..C-1. Prototypes are
// uniform on the unit sphere, samples are prototype + N(0, sigma^2 I).
std::vector<ClientDataset> generate(const SyntheticSpec& spec);

struct PretrainFederatedSplit {
  std::vector<ClientDataset> pretrain;
  std::vector<ClientDataset> federated;
};

// Identity-disjoint split after a seeded shuffle of the identities;
// round(fraction * C) identities go to pretraining.
PretrainFederatedSplit split_pretrain_federated(const std::vector<ClientDataset>& datasets,
                                                double pretrain_fraction, std::uint64_t seed);

// Removes `count` identities (seeded choice) and returns (kept, held_out).
std::pair<std::vector<ClientDataset>, std::vector<ClientDataset>> hold_out_identities(
    const std::vector<ClientDataset>& datasets, std::size_t count, std::uint64_t seed);

struct VerificationPair {
  Vector a;
  Vector b;
  std::uint32_t identity_a = 0;
  std::uint32_t identity_b = 0;
  bool same_identity = false;
};

struct PairProtocol {
  std::vector<VerificationPair> pairs;

  std::size_t num_genuine() const;
  std::size_t num_impostor() const;
};

// Samples genuine and impostor pairs without replacement. A pair is a pair of
// distinct samples; identities with a single sample contribute no genuine
// pairs.
PairProtocol build_pairs(const std::vector<ClientDataset>& heldout, std::size_t num_genuine,
                         std::size_t num_impostor, std::uint64_t seed);

}  // namespace fedface
