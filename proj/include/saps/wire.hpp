#pragma once

// SAPS frame format, little-endian throughout:
//
//   'S' 'A' 'P' 'S' | version u8 | msg_type u8 | payload_len u32 | payload | crc32 u32
//
// The CRC (CRC-32/ISO-HDLC) covers the payload_len payload bytes only.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "saps/core.hpp"

namespace saps::wire {

inline constexpr std::array<std::uint8_t, 4> kMagic{'S', 'A', 'P', 'S'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::size_t kTrailerSize = 4;
inline constexpr std::size_t kFrameOverhead = kHeaderSize + kTrailerSize;
inline constexpr std::uint32_t kMaxPayload = 1u << 30;
/// peer_id value in ROUND_START meaning "self-loop, no exchange this round".
inline constexpr std::uint32_t kNoPeer = 0xFFFFFFFFu;

enum class MsgType : std::uint8_t {
  kRoundStart = 1,
  kModelValues = 2,
  kRoundEnd = 3,
  kModelFull = 4,
  kBandwidthReport = 5,
};

const char* to_string(MsgType type);

using Bytes = std::vector<std::uint8_t>;

std::uint32_t crc32(std::span<const std::uint8_t> data);

class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { out_.push_back(v); }
  void put_u16(std::uint16_t v);
  void put_u32(std::uint32_t v);
  void put_u64(std::uint64_t v);
  void put_f64(double v);
  void put_bytes(std::span<const std::uint8_t> data) { out_.insert(out_.end(), data.begin(), data.end()); }

  std::size_t size() const { return out_.size(); }
  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

/// Bounds-checked little-endian reader; running past the end is a truncation error.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint8_t get_u8();
  std::uint16_t get_u16();
  std::uint32_t get_u32();
  std::uint64_t get_u64();
  double get_f64();

  std::size_t remaining() const { return data_.size() - pos_; }
  /// Throws kMalformed if unread bytes remain.
  void expect_end() const;

 private:
  std::span<const std::uint8_t> take(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

struct FrameHeader {
  MsgType type;
  std::uint32_t payload_len;
};

struct Frame {
  MsgType type;
  Bytes payload;
};

/// Total encoded size of a frame carrying payload_len bytes.
constexpr std::size_t frame_size(std::size_t payload_len) { return kFrameOverhead + payload_len; }

Bytes encode_frame(MsgType type, std::span<const std::uint8_t> payload);

/// Validates magic, version, type and the payload length bound of a 10-byte header.
FrameHeader parse_header(std::span<const std::uint8_t> header);

/// Decodes one complete frame; the input must contain exactly one frame.
Frame decode_frame(std::span<const std::uint8_t> bytes);
Frame decode_frame(std::span<const std::uint8_t> bytes, MsgType expected);

// ---------------------------------------------------------------------------
// Control messages

struct RoundStart {
  std::uint64_t round = 0;
  std::uint64_t seed = 0;
  std::uint32_t peer = kNoPeer;
  std::uint8_t flags = 0;

  bool has_peer() const { return peer != kNoPeer; }
  friend bool operator==(const RoundStart&, const RoundStart&) = default;
};

struct RoundEnd {
  std::uint64_t round = 0;
  std::uint32_t worker = 0;
  double local_loss = 0.0;
  friend bool operator==(const RoundEnd&, const RoundEnd&) = default;
};

/// Full dense model. A frame with zero values sent by the coordinator is a
/// request for the worker's model.
struct ModelFull {
  std::vector<double> values;
  friend bool operator==(const ModelFull&, const ModelFull&) = default;
};

struct BandwidthReport {
  std::vector<std::pair<std::uint32_t, double>> entries;
  friend bool operator==(const BandwidthReport&, const BandwidthReport&) = default;
};

Bytes encode(const RoundStart& msg);
Bytes encode(const RoundEnd& msg);
Bytes encode(const ModelFull& msg);
Bytes encode(const BandwidthReport& msg);

RoundStart decode_round_start(std::span<const std::uint8_t> frame);
RoundEnd decode_round_end(std::span<const std::uint8_t> frame);
ModelFull decode_model_full(std::span<const std::uint8_t> frame);
BandwidthReport decode_bandwidth_report(std::span<const std::uint8_t> frame);

/// Message type of an encoded frame without validating the rest of it.
MsgType peek_type(std::span<const std::uint8_t> frame);

}  // namespace saps::wire
