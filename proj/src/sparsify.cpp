#include "saps/sparsify.hpp"

#include <sstream>

namespace saps {

namespace {
__extension__ using u128 = unsigned __int128;
}  // namespace

std::uint64_t mask_threshold(std::uint32_t c) {
  if (c < 2) throw ValidationError("mask_threshold requires c >= 2");
  const u128 two_pow_64 = static_cast<u128>(1) << 64;
  return static_cast<std::uint64_t>(two_pow_64 / c);
}

MaskStream generate_mask(std::uint64_t seed, std::uint32_t c, std::size_t n_dims) {
  if (c == 0) throw ValidationError("generate_mask: c must be >= 1");
  if (n_dims == 0) throw ValidationError("generate_mask: n_dims must be >= 1");
  if (n_dims > 0xFFFFFFFFu) throw ValidationError("generate_mask: n_dims exceeds 32-bit index range");

  MaskStream mask;
  mask.seed_ = seed;
  mask.c_ = c;
  mask.bits_.assign(n_dims, 0);
  if (c == 1) {
    mask.bits_.assign(n_dims, 1);
    mask.indices_.resize(n_dims);
    for (std::size_t j = 0; j < n_dims; ++j) mask.indices_[j] = static_cast<std::uint32_t>(j);
    return mask;
  }
  const std::uint64_t threshold = mask_threshold(c);
  SplitMix64 stream(seed);
  mask.indices_.reserve(n_dims / c + 16);
  for (std::size_t j = 0; j < n_dims; ++j) {
    if (stream.next() < threshold) {
      mask.bits_[j] = 1;
      mask.indices_.push_back(static_cast<std::uint32_t>(j));
    }
  }
  return mask;
}

MaskStream MaskStream::from_bits(std::vector<std::uint8_t> bits) {
  MaskStream mask;
  mask.c_ = 0;
  mask.bits_ = std::move(bits);
  for (std::size_t j = 0; j < mask.bits_.size(); ++j) {
    if (mask.bits_[j]) {
      mask.bits_[j] = 1;
      mask.indices_.push_back(static_cast<std::uint32_t>(j));
    }
  }
  return mask;
}

namespace {

void require_same_length(const ParameterVector& x, const MaskStream& mask) {
  if (x.size() != mask.n_dims()) {
    std::ostringstream msg;
    msg << "model length " << x.size() << " does not match mask length " << mask.n_dims();
    throw ValidationError(msg.str());
  }
}

}  // namespace

SparsePayload extract_payload(const ParameterVector& x, const MaskStream& mask,
                              std::uint64_t round, std::uint32_t sender) {
  require_same_length(x, mask);
  SparsePayload p{round, sender, {}};
  p.values.reserve(mask.count());
  for (std::uint32_t j : mask.indices()) p.values.push_back(x[j]);
  return p;
}

ParameterVector scatter_payload(const SparsePayload& payload, const MaskStream& mask) {
  if (payload.count() != mask.count()) {
    throw ProtocolError(ProtocolFault::kCountMismatch, "payload does not fit mask");
  }
  ParameterVector out(mask.n_dims());
  for (std::size_t k = 0; k < mask.count(); ++k) out[mask.indices()[k]] = payload.values[k];
  return out;
}

void merge_masked_in_place(ParameterVector& x, const MaskStream& mask, const SparsePayload& peer) {
  require_same_length(x, mask);
  if (peer.count() != mask.count()) {
    std::ostringstream msg;
    msg << "peer " << peer.sender << " sent " << peer.count() << " values for round "
        << peer.round << ", mask selects " << mask.count() << " (seed desynchronized?)";
    throw ProtocolError(ProtocolFault::kCountMismatch, msg.str());
  }
  const auto& idx = mask.indices();
  for (std::size_t k = 0; k < idx.size(); ++k) {
    x[idx[k]] = 0.5 * (x[idx[k]] + peer.values[k]);
  }
}

ParameterVector merge_masked(const ParameterVector& x, const MaskStream& mask,
                             const SparsePayload& peer) {
  ParameterVector out = x;
  merge_masked_in_place(out, mask, peer);
  return out;
}

wire::Bytes encode_payload(const SparsePayload& p) {
  if (p.values.size() > (wire::kMaxPayload - 16) / 8) {
    throw ValidationError("payload too large for one frame");
  }
  wire::ByteWriter w;
  w.put_u64(p.round);
  w.put_u32(p.sender);
  w.put_u32(static_cast<std::uint32_t>(p.values.size()));
  for (double v : p.values) w.put_f64(v);
  const wire::Bytes body = w.take();
  return wire::encode_frame(wire::MsgType::kModelValues, body);
}

SparsePayload decode_payload(std::span<const std::uint8_t> bytes) {
  const wire::Frame f = wire::decode_frame(bytes, wire::MsgType::kModelValues);
  wire::ByteReader r(f.payload);
  SparsePayload p;
  p.round = r.get_u64();
  p.sender = r.get_u32();
  const std::uint32_t count = r.get_u32();
  if (r.remaining() != static_cast<std::size_t>(count) * 8) {
    throw ProtocolError(ProtocolFault::kMalformed, "MODEL_VALUES count disagrees with payload_len");
  }
  p.values.resize(count);
  for (auto& v : p.values) v = r.get_f64();
  return p;
}

}  // namespace saps
