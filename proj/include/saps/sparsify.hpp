#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "saps/core.hpp"
#include "saps/wire.hpp"

namespace saps {

/// Per-round Bernoulli(1/c) inclusion bits over model indices, expanded from
/// the round seed. Every worker holding the same (seed, c, N) gets the same mask.
class MaskStream {
 public:
  std::uint64_t seed() const { return seed_; }
  std::uint32_t c() const { return c_; }
  std::size_t n_dims() const { return bits_.size(); }
  bool included(std::size_t j) const { return bits_[j] != 0; }
  /// Included indices in ascending order.
  const std::vector<std::uint32_t>& indices() const { return indices_; }
  std::size_t count() const { return indices_.size(); }

  /// Mask with an explicit bit pattern; used to test merge rules in isolation.
  static MaskStream from_bits(std::vector<std::uint8_t> bits);

 private:
  friend MaskStream generate_mask(std::uint64_t seed, std::uint32_t c, std::size_t n_dims);

  std::uint64_t seed_ = 0;
  std::uint32_t c_ = 1;
  std::vector<std::uint8_t> bits_;
  std::vector<std::uint32_t> indices_;
};

/// Index j is included iff the j-th SplitMix64 output for seed is below
/// floor(2^64 / c); c = 1 includes everything. Throws ValidationError for c = 0
/// or n_dims = 0.
MaskStream generate_mask(std::uint64_t seed, std::uint32_t c, std::size_t n_dims);

/// Inclusion threshold floor(2^64 / c) for c >= 2.
std::uint64_t mask_threshold(std::uint32_t c);

/// Masked model values travelling between peers (only values, never indices).
struct SparsePayload {
  std::uint64_t round = 0;
  std::uint32_t sender = 0;
  std::vector<double> values;

  std::size_t count() const { return values.size(); }
  friend bool operator==(const SparsePayload&, const SparsePayload&) = default;
};

SparsePayload extract_payload(const ParameterVector& x, const MaskStream& mask,
                              std::uint64_t round, std::uint32_t sender);

/// x ∘ m rebuilt from a payload: included coordinates take the payload values, the rest are 0.
ParameterVector scatter_payload(const SparsePayload& payload, const MaskStream& mask);

/// Averages included coordinates with the peer's values, leaves the rest.
/// Throws ProtocolError(kCountMismatch) when the payload size disagrees with
/// the mask, which means the two sides expanded different seeds.
ParameterVector merge_masked(const ParameterVector& x, const MaskStream& mask,
                             const SparsePayload& peer);
void merge_masked_in_place(ParameterVector& x, const MaskStream& mask, const SparsePayload& peer);

/// MODEL_VALUES frame: round u64, sender u32, count u32, count x f64.
wire::Bytes encode_payload(const SparsePayload& p);
SparsePayload decode_payload(std::span<const std::uint8_t> bytes);

/// Encoded frame size for a payload of `count` values.
constexpr std::size_t payload_frame_size(std::size_t count) {
  return wire::frame_size(16 + 8 * count);
}

}  // namespace saps
