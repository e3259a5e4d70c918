#include "fedface/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <unordered_set>

namespace fedface {
namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

void ClientDataset::validate() const {
  if (samples.empty()) {
    throw ConfigError("client dataset for identity " + std::to_string(identity) + " is empty");
  }
  for (const auto& s : samples) {
    if (s.identity != identity) {
      throw ConfigError("client dataset for identity " + std::to_string(identity) +
                        " holds a sample of identity " + std::to_string(s.identity));
    }
  }
}

void SyntheticSpec::validate() const {
  if (num_identities < 2) throw ConfigError("synthetic data needs at least 2 identities");
  if (min_samples < 1 || max_samples < min_samples) {
    throw ConfigError("synthetic data: need 1 <= min_samples <= max_samples");
  }
  if (input_dim < 1) throw ConfigError("synthetic data: input_dim must be positive");
  if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
    throw ConfigError("synthetic data: noise sigma must be positive");
  }
}

std::vector<ClientDataset> generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Vector> prototypes;
  prototypes.reserve(spec.num_identities);
  while (prototypes.size() < spec.num_identities) {
    bool accepted = false;
    for (int attempt = 0; attempt < kPrototypeMaxAttempts && !accepted; ++attempt) {
      Vector p(spec.input_dim);
      for (double& x : p) x = normal(rng);
      const double n = norm2(p);
      if (!(n > kNormEpsilon)) continue;
      for (double& x : p) x /= n;
      accepted = std::all_of(prototypes.begin(), prototypes.end(), [&](const Vector& q) {
        return dot(p, q) <= kPrototypeMaxCosine;
      });
      if (accepted) prototypes.push_back(std::move(p));
    }
    if (!accepted) {
      throw CapacityError("could not place " + std::to_string(spec.num_identities) +
                          " prototypes in dimension " + std::to_string(spec.input_dim));
    }
  }

  std::uniform_int_distribution<std::size_t> count_dist(spec.min_samples, spec.max_samples);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  std::vector<ClientDataset> out(spec.num_identities);
  for (std::size_t c = 0; c < spec.num_identities; ++c) {
    out[c].identity = static_cast<std::uint32_t>(c);
    const std::size_t n = count_dist(rng);
    out[c].samples.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
      IdentitySample s;
      s.identity = out[c].identity;
      s.features = prototypes[c];
      for (double& x : s.features) x += noise(rng);
      out[c].samples.push_back(std::move(s));
    }
  }
  return out;
}

PretrainFederatedSplit split_pretrain_federated(const std::vector<ClientDataset>& datasets,
                                                double pretrain_fraction, std::uint64_t seed) {
  if (!(pretrain_fraction > 0.0 && pretrain_fraction < 1.0)) {
    throw ConfigError("pretrain fraction must lie in (0, 1)");
  }
  const auto count =
      static_cast<std::size_t>(std::llround(pretrain_fraction * static_cast<double>(datasets.size())));
  if (count == 0 || count >= datasets.size()) {
    throw ConfigError("pretrain fraction " + std::to_string(pretrain_fraction) + " on " +
                      std::to_string(datasets.size()) + " identities leaves one side empty");
  }
  const auto order = shuffled_indices(datasets.size(), seed);
  PretrainFederatedSplit split;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto& ds = datasets[order[k]];
    ds.validate();
    (k < count ? split.pretrain : split.federated).push_back(ds);
  }
  auto by_identity = [](const ClientDataset& a, const ClientDataset& b) {
    return a.identity < b.identity;
  };
  std::sort(split.pretrain.begin(), split.pretrain.end(), by_identity);
  std::sort(split.federated.begin(), split.federated.end(), by_identity);
  return split;
}

std::pair<std::vector<ClientDataset>, std::vector<ClientDataset>> hold_out_identities(
    const std::vector<ClientDataset>& datasets, std::size_t count, std::uint64_t seed) {
  if (count > datasets.size()) throw ConfigError("cannot hold out more identities than exist");
  const auto order = shuffled_indices(datasets.size(), seed);
  std::vector<bool> held(datasets.size(), false);
  for (std::size_t k = 0; k < count; ++k) held[order[k]] = true;
  std::pair<std::vector<ClientDataset>, std::vector<ClientDataset>> out;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    (held[i] ? out.second : out.first).push_back(datasets[i]);
  }
  return out;
}

std::size_t PairProtocol::num_genuine() const {
  return static_cast<std::size_t>(
      std::count_if(pairs.begin(), pairs.end(), [](const auto& p) { return p.same_identity; }));
}

std::size_t PairProtocol::num_impostor() const { return pairs.size() - num_genuine(); }

PairProtocol build_pairs(const std::vector<ClientDataset>& heldout, std::size_t num_genuine,
                         std::size_t num_impostor, std::uint64_t seed) {
  struct Ref {
    std::size_t ds;
    std::size_t sample;
  };
  std::vector<Ref> refs;
  std::size_t identities_with_pairs = 0;
  for (std::size_t d = 0; d < heldout.size(); ++d) {
    heldout[d].validate();
    if (heldout[d].size() >= 2) ++identities_with_pairs;
    for (std::size_t s = 0; s < heldout[d].size(); ++s) refs.push_back({d, s});
  }
  if (heldout.size() < 2 || identities_with_pairs == 0) {
    throw ConfigError("pair protocol needs >= 2 identities and at least one with >= 2 samples");
  }

  std::vector<std::pair<std::size_t, std::size_t>> genuine;
  std::size_t total_impostor = 0;
  for (std::size_t u = 0; u < refs.size(); ++u) {
    for (std::size_t v = u + 1; v < refs.size(); ++v) {
      if (refs[u].ds == refs[v].ds) {
        genuine.emplace_back(u, v);
      } else {
        ++total_impostor;
      }
    }
  }
  if (num_genuine > genuine.size()) {
    throw ConfigError("requested " + std::to_string(num_genuine) + " genuine pairs, only " +
                      std::to_string(genuine.size()) + " exist");
  }
  if (num_impostor > total_impostor) {
    throw ConfigError("requested " + std::to_string(num_impostor) + " impostor pairs, only " +
                      std::to_string(total_impostor) + " exist");
  }

  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < num_genuine; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, genuine.size() - 1);
    std::swap(genuine[k], genuine[pick(rng)]);
  }
  genuine.resize(num_genuine);

  std::vector<std::pair<std::size_t, std::size_t>> impostor;
  impostor.reserve(num_impostor);
  if (num_impostor * 2 <= total_impostor) {
    std::unordered_set<std::uint64_t> seen;
    std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
    while (impostor.size() < num_impostor) {
      std::size_t u = pick(rng);
      std::size_t v = pick(rng);
      if (refs[u].ds == refs[v].ds) continue;
      if (u > v) std::swap(u, v);
      if (seen.insert(static_cast<std::uint64_t>(u) * refs.size() + v).second) {
        impostor.emplace_back(u, v);
      }
    }
  } else {
    for (std::size_t u = 0; u < refs.size(); ++u) {
      for (std::size_t v = u + 1; v < refs.size(); ++v) {
        if (refs[u].ds != refs[v].ds) impostor.emplace_back(u, v);
      }
    }
    for (std::size_t k = 0; k < num_impostor; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, impostor.size() - 1);
      std::swap(impostor[k], impostor[pick(rng)]);
    }
    impostor.resize(num_impostor);
  }

  PairProtocol protocol;
  protocol.pairs.reserve(num_genuine + num_impostor);
  auto emit = [&](std::size_t u, std::size_t v) {
    const auto& a = heldout[refs[u].ds];
    const auto& b = heldout[refs[v].ds];
    protocol.pairs.push_back({a.samples[refs[u].sample].features,
                              b.samples[refs[v].sample].features, a.identity, b.identity,
                              a.identity == b.identity});
  };
  for (auto [u, v] : genuine) emit(u, v);
  for (auto [u, v] : impostor) emit(u, v);
  return protocol;
}

}  // namespace fedface
