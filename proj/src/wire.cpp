#include "fedface/wire.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "fedface/losses.hpp"

namespace fedface {
namespace {

using Kind = DecodeError::Kind;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

void put_f64(std::vector<std::uint8_t>& out, double x) {
  put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
}

void put_array(std::vector<std::uint8_t>& out, std::span<const double> xs) {
  put_le<std::uint64_t>(out, xs.size());
  for (double x : xs) put_f64(out, x);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint64_t u64() {
    need(8);
    const auto v = get_le<std::uint64_t>(bytes_.data() + pos_);
    pos_ += 8;
    return v;
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }

  Vector array(std::size_t expected, const char* what) {
    const std::uint64_t n = u64();
    if (n != expected) {
      throw DecodeError(Kind::LengthMismatch, std::string(what) + ": length " + std::to_string(n) +
                                                  ", negotiated " + std::to_string(expected));
    }
    if (n > remaining() / 8) throw DecodeError(Kind::Truncated, std::string(what) + ": truncated");
    Vector v(n);
    for (auto& x : v) {
      x = std::bit_cast<double>(get_le<std::uint64_t>(bytes_.data() + pos_));
      pos_ += 8;
    }
    return v;
  }

  std::string rest() {
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), remaining());
    pos_ = bytes_.size();
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw DecodeError(Kind::Truncated, "payload truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_unit(const Vector& w, const char* what) {
  if (!all_finite(w) || !(std::abs(norm2(w) - 1.0) <= kUnitTolerance)) {
    throw DecodeError(Kind::BadPayload, std::string(what) + " is not a unit vector");
  }
}

}  // namespace

std::vector<std::uint8_t> encode(const WireMessage& msg) {
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderSize + msg.payload.size());
  out.push_back(msg.version);
  out.push_back(static_cast<std::uint8_t>(msg.type));
  put_le<std::uint32_t>(out, msg.round);
  put_le<std::uint32_t>(out, msg.client_id);
  put_le<std::uint64_t>(out, msg.payload.size());
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

std::uint64_t peek_payload_len(std::span<const std::uint8_t, kFrameHeaderSize> header) {
  if (header[0] != kWireVersion) {
    throw DecodeError(Kind::BadVersion, "unsupported wire version " + std::to_string(header[0]));
  }
  if (header[1] > static_cast<std::uint8_t>(MessageType::Error)) {
    throw DecodeError(Kind::UnknownType, "unknown message type " + std::to_string(header[1]));
  }
  return get_le<std::uint64_t>(header.data() + 10);
}

WireMessage decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kFrameHeaderSize) {
    // Report a bad version or type before truncation when those bytes exist.
    if (!bytes.empty() && bytes[0] != kWireVersion) {
      throw DecodeError(Kind::BadVersion, "unsupported wire version " + std::to_string(bytes[0]));
    }
    if (bytes.size() > 1 && bytes[1] > static_cast<std::uint8_t>(MessageType::Error)) {
      throw DecodeError(Kind::UnknownType, "unknown message type " + std::to_string(bytes[1]));
    }
    throw DecodeError(Kind::Truncated, "frame shorter than header (" +
                                           std::to_string(bytes.size()) + " bytes)");
  }
  const std::uint64_t len = peek_payload_len(bytes.first<kFrameHeaderSize>());
  const std::size_t body = bytes.size() - kFrameHeaderSize;
  if (len > body) {
    throw DecodeError(Kind::Truncated, "payload announces " + std::to_string(len) +
                                           " bytes, frame holds " + std::to_string(body));
  }
  if (len < body) {
    throw DecodeError(Kind::LengthMismatch, "frame has " + std::to_string(body - len) +
                                                " trailing bytes");
  }
  WireMessage msg;
  msg.version = bytes[0];
  msg.type = static_cast<MessageType>(bytes[1]);
  msg.round = get_le<std::uint32_t>(bytes.data() + 2);
  msg.client_id = get_le<std::uint32_t>(bytes.data() + 6);
  msg.payload.assign(bytes.begin() + kFrameHeaderSize, bytes.end());
  return msg;
}

std::vector<std::uint8_t> encode_broadcast(const BroadcastPayload& p) {
  std::vector<std::uint8_t> out;
  put_array(out, p.theta);
  if (p.class_embedding) put_array(out, *p.class_embedding);
  return out;
}

BroadcastPayload decode_broadcast(std::span<const std::uint8_t> payload,
                                  const NegotiatedShape& shape) {
  Reader r(payload);
  BroadcastPayload p;
  p.theta = r.array(shape.param_count, "theta");
  if (r.remaining() > 0) {
    p.class_embedding = r.array(shape.embedding_dim, "class embedding");
    check_unit(*p.class_embedding, "broadcast class embedding");
  }
  if (r.remaining() != 0) throw DecodeError(Kind::LengthMismatch, "broadcast has trailing bytes");
  return p;
}

std::vector<std::uint8_t> encode_update(const UpdatePayload& p) {
  std::vector<std::uint8_t> out;
  put_array(out, p.theta);
  put_array(out, p.class_embedding);
  put_le<std::uint64_t>(out, p.num_samples);
  return out;
}

UpdatePayload decode_update(std::span<const std::uint8_t> payload, const NegotiatedShape& shape) {
  Reader r(payload);
  UpdatePayload p;
  p.theta = r.array(shape.param_count, "theta");
  p.class_embedding = r.array(shape.embedding_dim, "class embedding");
  check_unit(p.class_embedding, "update class embedding");
  p.num_samples = r.u64();
  if (p.num_samples == 0) throw DecodeError(Kind::BadPayload, "update reports zero samples");
  if (r.remaining() != 0) throw DecodeError(Kind::LengthMismatch, "update has trailing bytes");
  return p;
}

std::vector<std::uint8_t> encode_error(const ErrorPayload& p) {
  std::vector<std::uint8_t> out;
  out.push_back(static_cast<std::uint8_t>(p.code));
  out.insert(out.end(), p.message.begin(), p.message.end());
  return out;
}

ErrorPayload decode_error(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  ErrorPayload p;
  const auto code = r.u8();
  if (code < 1 || code > 3) throw DecodeError(Kind::BadPayload, "unknown error code");
  p.code = static_cast<ErrorCode>(code);
  p.message = r.rest();
  return p;
}

}  // namespace fedface
