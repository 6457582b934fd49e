#include <doctest.h>

#include <cstring>
#include <functional>
#include <string>

#include "saps/wire.hpp"

using namespace saps;
using namespace saps::wire;

namespace {

// Bitwise CRC-32/ISO-HDLC, reflected polynomial 0xEDB88320.
std::uint32_t ref_crc(const std::uint8_t* p, std::size_t n) {
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) {
    c ^= p[i];
    for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (0u - (c & 1u)));
  }
  return ~c;
}

ProtocolFault fault_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ProtocolError& e) {
    return e.fault();
  }
  FAIL("no ProtocolError thrown");
  return ProtocolFault::kMalformed;
}

}  // namespace

TEST_CASE("crc32 check value") {
  const std::string s = "123456789";
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
  CHECK(crc32({p, s.size()}) == 0xCBF43926u);
  CHECK(ref_crc(p, s.size()) == 0xCBF43926u);
}

TEST_CASE("frame layout is little-endian with CRC over the payload") {
  const Bytes payload{1, 2, 3, 4, 5};
  const Bytes f = encode_frame(MsgType::kRoundEnd, payload);
  REQUIRE(f.size() == frame_size(5));
  CHECK(std::memcmp(f.data(), "SAPS", 4) == 0);
  CHECK(f[4] == kVersion);
  CHECK(f[5] == 3);
  CHECK(f[6] == 5);
  CHECK(f[7] == 0);
  CHECK(f[8] == 0);
  CHECK(f[9] == 0);
  const std::uint32_t crc = ref_crc(payload.data(), payload.size());
  CHECK(f[15] == (crc & 0xFF));
  CHECK(f[18] == (crc >> 24));
  const Frame d = decode_frame(f);
  CHECK(d.type == MsgType::kRoundEnd);
  CHECK(d.payload == payload);
}

TEST_CASE("corrupt frames are rejected with the right fault") {
  const Bytes good = encode(RoundEnd{3, 1, 0.25});

  Bytes bad = good;
  bad[0] = 'X';
  CHECK(fault_of([&] { decode_frame(bad); }) == ProtocolFault::kBadMagic);

  bad = good;
  bad[4] = 9;
  CHECK(fault_of([&] { decode_frame(bad); }) == ProtocolFault::kBadVersion);

  bad = good;
  bad[5] = 77;
  CHECK(fault_of([&] { decode_frame(bad); }) == ProtocolFault::kUnexpectedType);

  bad = good;
  bad[12] ^= 0x01;
  CHECK(fault_of([&] { decode_frame(bad); }) == ProtocolFault::kCrcMismatch);

  bad = Bytes(good.begin(), good.begin() + kHeaderSize);
  CHECK(fault_of([&] { decode_frame(bad); }) == ProtocolFault::kTruncated);

  bad = good;
  bad.push_back(0);
  CHECK(fault_of([&] { decode_frame(bad); }) == ProtocolFault::kMalformed);

  CHECK(fault_of([&] { decode_frame(good, MsgType::kRoundStart); }) == ProtocolFault::kUnexpectedType);
}

TEST_CASE("control message round trips") {
  const RoundStart rs{7, 0x0123456789ABCDEFULL, 3, 0};
  CHECK(decode_round_start(encode(rs)) == rs);
  CHECK(peek_type(encode(rs)) == MsgType::kRoundStart);
  const RoundStart self{8, 1, kNoPeer, 0};
  CHECK_FALSE(decode_round_start(encode(self)).has_peer());

  const RoundEnd re{7, 2, 1.5};
  CHECK(decode_round_end(encode(re)) == re);

  const ModelFull mf{{1.0, -2.5, 1e-300}};
  CHECK(decode_model_full(encode(mf)) == mf);
  CHECK(decode_model_full(encode(ModelFull{})).values.empty());
  CHECK(encode(mf).size() == frame_size(4 + 8 * 3));

  const BandwidthReport br{{{1, 100.0}, {4, 2.5e6}}};
  CHECK(decode_bandwidth_report(encode(br)) == br);
}

TEST_CASE("round start payload field layout") {
  const Bytes f = encode(RoundStart{1, 2, 3, 0});
  CHECK(f.size() == frame_size(8 + 8 + 4 + 1));
  CHECK(f[kHeaderSize] == 1);
  CHECK(f[kHeaderSize + 8] == 2);
  CHECK(f[kHeaderSize + 16] == 3);
}

TEST_CASE("byte reader bounds") {
  const Bytes b{1, 2, 3};
  ByteReader r(b);
  CHECK(r.get_u16() == 0x0201);
  CHECK(fault_of([&] { r.get_u32(); }) == ProtocolFault::kTruncated);
  ByteReader r2(b);
  r2.get_u8();
  CHECK(fault_of([&] { r2.expect_end(); }) == ProtocolFault::kMalformed);
}
