#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedface/numerics.hpp"

namespace fedface {

// Frame layout, all integers little-endian:
//
//   offset  size  field
//   0       1     version (= 1)
//   1       1     msg_type
//   2       4     round
//   6       4     client_id
//   10      8     payload_len
//   18      n     payload
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 18;

enum class MessageType : std::uint8_t {
  ServerBroadcast = 0,
  ClientUpdate = 1,
  RoundAck = 2,
  Error = 3,
};

struct WireMessage {
  std::uint8_t version = kWireVersion;
  MessageType type = MessageType::ServerBroadcast;
  std::uint32_t round = 0;
  std::uint32_t client_id = 0;
  std::vector<std::uint8_t> payload;

  friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

std::vector<std::uint8_t> encode(const WireMessage& msg);

// Decodes exactly one frame; `bytes` must hold nothing else.
WireMessage decode(std::span<const std::uint8_t> bytes);

// Payload length announced by a header, after validating version and type.
std::uint64_t peek_payload_len(std::span<const std::uint8_t, kFrameHeaderSize> header);

// Server -> client i: theta_t and w_t^i. w is absent until the client has
// reported its own initial class embedding.
struct BroadcastPayload {
  Vector theta;
  std::optional<Vector> class_embedding;

  friend bool operator==(const BroadcastPayload&, const BroadcastPayload&) = default;
};

// Client i -> server: theta_{t+1}^i, w_{t+1}^i and n_i.
struct UpdatePayload {
  Vector theta;
  Vector class_embedding;
  std::uint64_t num_samples = 0;

  friend bool operator==(const UpdatePayload&, const UpdatePayload&) = default;
};

// Sizes both sides agree on out of band (the model layout and d).
struct NegotiatedShape {
  std::size_t param_count = 0;
  std::size_t embedding_dim = 0;
};

std::vector<std::uint8_t> encode_broadcast(const BroadcastPayload& p);
BroadcastPayload decode_broadcast(std::span<const std::uint8_t> payload,
                                  const NegotiatedShape& shape);

std::vector<std::uint8_t> encode_update(const UpdatePayload& p);
UpdatePayload decode_update(std::span<const std::uint8_t> payload, const NegotiatedShape& shape);

enum class ErrorCode : std::uint8_t { NonFiniteLoss = 1, BadRequest = 2, Internal = 3 };

struct ErrorPayload {
  ErrorCode code = ErrorCode::Internal;
  std::string message;
};

std::vector<std::uint8_t> encode_error(const ErrorPayload& p);
ErrorPayload decode_error(std::span<const std::uint8_t> payload);

// Static description of every payload field; the privacy check walks these.
enum class FieldKind { ModelParameters, OwnClassEmbedding, SampleCount, ErrorInfo };

struct FieldDescriptor {
  std::string_view name;
  FieldKind kind;
  bool optional;
};

inline constexpr std::array<FieldDescriptor, 2> kBroadcastFields{{
    {"theta", FieldKind::ModelParameters, false},
    {"class_embedding", FieldKind::OwnClassEmbedding, true},
}};

inline constexpr std::array<FieldDescriptor, 3> kUpdateFields{{
    {"theta", FieldKind::ModelParameters, false},
    {"class_embedding", FieldKind::OwnClassEmbedding, false},
    {"num_samples", FieldKind::SampleCount, false},
}};

inline constexpr std::array<FieldDescriptor, 2> kErrorFields{{
    {"code", FieldKind::ErrorInfo, false},
    {"message", FieldKind::ErrorInfo, false},
}};

}  // namespace fedface
