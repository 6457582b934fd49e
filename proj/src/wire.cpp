#include "saps/wire.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include <zlib.h>

namespace saps::wire {

static_assert(std::endian::native == std::endian::little,
              "frame codec assumes a little-endian host");

const char* to_string(MsgType type) {
  switch (type) {
    case MsgType::kRoundStart: return "ROUND_START";
    case MsgType::kModelValues: return "MODEL_VALUES";
    case MsgType::kRoundEnd: return "ROUND_END";
    case MsgType::kModelFull: return "MODEL_FULL";
    case MsgType::kBandwidthReport: return "BANDWIDTH_REPORT";
  }
  return "UNKNOWN";
}

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  std::size_t offset = 0;
  while (offset < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - offset, 1u << 30));
    crc = ::crc32(crc, data.data() + offset, chunk);
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

template <typename T>
void append_le(Bytes& out, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T load_le(std::span<const std::uint8_t> in) {
  T v;
  std::memcpy(&v, in.data(), sizeof(T));
  return v;
}

bool known_type(std::uint8_t t) { return t >= 1 && t <= 5; }

}  // namespace

void ByteWriter::put_u16(std::uint16_t v) { append_le(out_, v); }
void ByteWriter::put_u32(std::uint32_t v) { append_le(out_, v); }
void ByteWriter::put_u64(std::uint64_t v) { append_le(out_, v); }
void ByteWriter::put_f64(double v) { append_le(out_, v); }

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (remaining() < n) {
    throw ProtocolError(ProtocolFault::kTruncated, "payload ends before field");
  }
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::get_u8() { return take(1)[0]; }
std::uint16_t ByteReader::get_u16() { return load_le<std::uint16_t>(take(2)); }
std::uint32_t ByteReader::get_u32() { return load_le<std::uint32_t>(take(4)); }
std::uint64_t ByteReader::get_u64() { return load_le<std::uint64_t>(take(8)); }
double ByteReader::get_f64() { return load_le<double>(take(8)); }

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw ProtocolError(ProtocolFault::kMalformed, "trailing bytes in payload");
  }
}

Bytes encode_frame(MsgType type, std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxPayload) throw ValidationError("frame payload too large");
  const auto len = static_cast<std::uint32_t>(payload.size());
  const std::uint32_t crc = crc32(payload);
  Bytes out(frame_size(payload.size()));
  std::uint8_t* p = out.data();
  std::memcpy(p, kMagic.data(), kMagic.size());
  p[4] = kVersion;
  p[5] = static_cast<std::uint8_t>(type);
  std::memcpy(p + 6, &len, 4);
  if (!payload.empty()) std::memcpy(p + kHeaderSize, payload.data(), payload.size());
  std::memcpy(p + kHeaderSize + payload.size(), &crc, 4);
  return out;
}

FrameHeader parse_header(std::span<const std::uint8_t> header) {
  if (header.size() < kHeaderSize) {
    throw ProtocolError(ProtocolFault::kTruncated, "frame shorter than header");
  }
  if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) {
    throw ProtocolError(ProtocolFault::kBadMagic, "expected 'SAPS'");
  }
  if (header[4] != kVersion) {
    throw ProtocolError(ProtocolFault::kBadVersion,
                        "got version " + std::to_string(header[4]));
  }
  if (!known_type(header[5])) {
    throw ProtocolError(ProtocolFault::kUnexpectedType,
                        "unknown msg_type " + std::to_string(header[5]));
  }
  const auto len = load_le<std::uint32_t>(header.subspan(6, 4));
  if (len > kMaxPayload) {
    throw ProtocolError(ProtocolFault::kMalformed, "payload_len exceeds limit");
  }
  return {static_cast<MsgType>(header[5]), len};
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  const FrameHeader h = parse_header(bytes);
  const std::size_t total = frame_size(h.payload_len);
  if (bytes.size() < total) {
    std::ostringstream msg;
    msg << "have " << bytes.size() << " of " << total << " bytes";
    throw ProtocolError(ProtocolFault::kTruncated, msg.str());
  }
  if (bytes.size() > total) {
    throw ProtocolError(ProtocolFault::kMalformed, "bytes after frame trailer");
  }
  auto payload = bytes.subspan(kHeaderSize, h.payload_len);
  const auto expected_crc = load_le<std::uint32_t>(bytes.subspan(kHeaderSize + h.payload_len, 4));
  if (crc32(payload) != expected_crc) {
    throw ProtocolError(ProtocolFault::kCrcMismatch, std::string(to_string(h.type)) + " frame");
  }
  return {h.type, Bytes(payload.begin(), payload.end())};
}

Frame decode_frame(std::span<const std::uint8_t> bytes, MsgType expected) {
  Frame f = decode_frame(bytes);
  if (f.type != expected) {
    throw ProtocolError(ProtocolFault::kUnexpectedType,
                        std::string("expected ") + to_string(expected) + ", got " + to_string(f.type));
  }
  return f;
}

MsgType peek_type(std::span<const std::uint8_t> frame) { return parse_header(frame).type; }

// ---------------------------------------------------------------------------

Bytes encode(const RoundStart& msg) {
  ByteWriter w;
  w.put_u64(msg.round);
  w.put_u64(msg.seed);
  w.put_u32(msg.peer);
  w.put_u8(msg.flags);
  const Bytes payload = w.take();
  return encode_frame(MsgType::kRoundStart, payload);
}

Bytes encode(const RoundEnd& msg) {
  ByteWriter w;
  w.put_u64(msg.round);
  w.put_u32(msg.worker);
  w.put_f64(msg.local_loss);
  const Bytes payload = w.take();
  return encode_frame(MsgType::kRoundEnd, payload);
}

Bytes encode(const ModelFull& msg) {
  if (msg.values.size() > (kMaxPayload - 4) / 8) throw ValidationError("model too large for one frame");
  ByteWriter w;
  w.put_u32(static_cast<std::uint32_t>(msg.values.size()));
  for (double v : msg.values) w.put_f64(v);
  const Bytes payload = w.take();
  return encode_frame(MsgType::kModelFull, payload);
}

Bytes encode(const BandwidthReport& msg) {
  if (msg.entries.size() > 0xFFFF) throw ValidationError("bandwidth report has too many entries");
  ByteWriter w;
  w.put_u16(static_cast<std::uint16_t>(msg.entries.size()));
  for (auto [peer, speed] : msg.entries) {
    w.put_u32(peer);
    w.put_f64(speed);
  }
  const Bytes payload = w.take();
  return encode_frame(MsgType::kBandwidthReport, payload);
}

RoundStart decode_round_start(std::span<const std::uint8_t> frame) {
  const Frame f = decode_frame(frame, MsgType::kRoundStart);
  ByteReader r(f.payload);
  RoundStart msg;
  msg.round = r.get_u64();
  msg.seed = r.get_u64();
  msg.peer = r.get_u32();
  msg.flags = r.get_u8();
  r.expect_end();
  return msg;
}

RoundEnd decode_round_end(std::span<const std::uint8_t> frame) {
  const Frame f = decode_frame(frame, MsgType::kRoundEnd);
  ByteReader r(f.payload);
  RoundEnd msg;
  msg.round = r.get_u64();
  msg.worker = r.get_u32();
  msg.local_loss = r.get_f64();
  r.expect_end();
  return msg;
}

ModelFull decode_model_full(std::span<const std::uint8_t> frame) {
  const Frame f = decode_frame(frame, MsgType::kModelFull);
  ByteReader r(f.payload);
  const std::uint32_t count = r.get_u32();
  if (r.remaining() != static_cast<std::size_t>(count) * 8) {
    throw ProtocolError(ProtocolFault::kMalformed, "MODEL_FULL count disagrees with payload_len");
  }
  ModelFull msg;
  msg.values.resize(count);
  for (auto& v : msg.values) v = r.get_f64();
  return msg;
}

BandwidthReport decode_bandwidth_report(std::span<const std::uint8_t> frame) {
  const Frame f = decode_frame(frame, MsgType::kBandwidthReport);
  ByteReader r(f.payload);
  const std::uint16_t n = r.get_u16();
  BandwidthReport msg;
  msg.entries.reserve(n);
  for (std::uint16_t i = 0; i < n; ++i) {
    const std::uint32_t peer = r.get_u32();
    const double speed = r.get_f64();
    msg.entries.emplace_back(peer, speed);
  }
  r.expect_end();
  return msg;
}

}  // namespace saps::wire
