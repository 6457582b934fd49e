#include <doctest.h>

#include <cmath>

#include "saps/matching.hpp"
#include "saps/sparsify.hpp"

using namespace saps;

namespace {

std::uint64_t ref_next(std::uint64_t& s) {
  s += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// floor(2^64 / c) without 128-bit arithmetic.
std::uint64_t ref_threshold(std::uint64_t c) {
  std::uint64_t q = ~0ULL / c;
  if (~0ULL % c == c - 1) ++q;
  return q;
}

std::vector<std::uint8_t> ref_mask(std::uint64_t seed, std::uint64_t c, std::size_t n) {
  std::vector<std::uint8_t> m(n);
  std::uint64_t s = seed;
  for (std::size_t j = 0; j < n; ++j) {
    const std::uint64_t v = ref_next(s);
    m[j] = c == 1 ? 1 : (v < ref_threshold(c) ? 1 : 0);
  }
  return m;
}

ProtocolFault fault_of(const wire::Bytes& b) {
  try {
    decode_payload(b);
  } catch (const ProtocolError& e) {
    return e.fault();
  }
  FAIL("decode succeeded");
  return ProtocolFault::kMalformed;
}

}  // namespace

TEST_CASE("threshold matches floor(2^64/c)") {
  for (std::uint32_t c : {2u, 3u, 7u, 10u, 64u, 100u, 1000u, 4294967295u}) {
    CHECK(mask_threshold(c) == ref_threshold(c));
  }
  CHECK(mask_threshold(2) == 0x8000000000000000ULL);
}

TEST_CASE("c = 1 keeps every index") {
  const MaskStream m = generate_mask(123, 1, 5);
  CHECK(m.count() == 5);
  for (std::size_t j = 0; j < 5; ++j) CHECK(m.included(j));
}

TEST_CASE("mask equals the reference construction") {
  SplitMix64 seeds(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint64_t seed = seeds.next();
    const std::uint32_t c = 1 + static_cast<std::uint32_t>(seeds.uniform_below(120));
    const std::size_t n = 1 + seeds.uniform_below(300);
    const MaskStream a = generate_mask(seed, c, n);
    const MaskStream b = generate_mask(seed, c, n);
    const auto ref = ref_mask(seed, c, n);
    for (std::size_t j = 0; j < n; ++j) {
      REQUIRE(a.included(j) == (ref[j] != 0));
      REQUIRE(b.included(j) == a.included(j));
    }
    std::size_t k = 0;
    for (auto j : a.indices()) {
      if (k > 0) REQUIRE(a.indices()[k - 1] < j);
      ++k;
    }
  }
}

TEST_CASE("c = 100 over a million indices keeps about one percent") {
  const MaskStream m = generate_mask(2024, 100, 1000000);
  CHECK(m.count() >= 9000);
  CHECK(m.count() <= 11000);
}

TEST_CASE("bad mask arguments") {
  CHECK_THROWS_AS(generate_mask(1, 0, 4), ValidationError);
  CHECK_THROWS_AS(generate_mask(1, 2, 0), ValidationError);
}

TEST_CASE("extract, scatter and merge examples") {
  const ParameterVector x(std::vector<double>{1, 2, 3});
  const MaskStream m = MaskStream::from_bits({1, 0, 1});
  const SparsePayload p = extract_payload(x, m, 4, 1);
  CHECK(p.values == std::vector<double>{1, 3});
  CHECK(p.count() == 2);
  CHECK(scatter_payload(p, m) == ParameterVector(std::vector<double>{1, 0, 3}));

  const MaskStream none = MaskStream::from_bits({0, 0, 0});
  CHECK(extract_payload(x, none, 0, 0).count() == 0);
  CHECK(merge_masked(x, none, SparsePayload{}) == x);

  const ParameterVector a(std::vector<double>{1, 3});
  const MaskStream all = MaskStream::from_bits({1, 1});
  CHECK(merge_masked(a, all, SparsePayload{0, 1, {3, 1}}) == ParameterVector(std::vector<double>{2, 2}));

  CHECK(merge_masked(x, m, extract_payload(x, m, 0, 0)) == x);

  try {
    merge_masked(x, m, SparsePayload{0, 1, {1}});
    FAIL("expected a count mismatch");
  } catch (const ProtocolError& e) {
    CHECK(e.fault() == ProtocolFault::kCountMismatch);
  }
}

TEST_CASE("merge conserves pair sums on every included index") {
  SplitMix64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.uniform_below(40);
    const auto c = static_cast<std::uint32_t>(1 + rng.uniform_below(5));
    ParameterVector xi(n), xj(n);
    for (std::size_t k = 0; k < n; ++k) {
      xi[k] = rng.normal();
      xj[k] = rng.normal();
    }
    const MaskStream m = generate_mask(rng.next(), c, n);
    const ParameterVector yi = merge_masked(xi, m, extract_payload(xj, m, 0, 1));
    const ParameterVector yj = merge_masked(xj, m, extract_payload(xi, m, 0, 0));
    for (std::size_t k = 0; k < n; ++k) {
      CHECK(std::abs((yi[k] + yj[k]) - (xi[k] + xj[k])) <= 1e-12);
      if (!m.included(k)) {
        CHECK(yi[k] == xi[k]);
        CHECK(yj[k] == xj[k]);
      }
    }
  }
}

TEST_CASE("masking commutes with gossip mixing") {
  SplitMix64 rng(17);
  int instances = 0;
  for (std::size_t n : {2u, 4u, 8u}) {
    for (std::size_t dims : {1u, 3u, 17u}) {
      for (int k = 0; k < 120; ++k) {
        Eigen::MatrixXd a(dims, n);
        for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
        // random matching-derived W
        auto perm = random_permutation(static_cast<std::uint32_t>(n), rng);
        std::vector<WorkerPair> pairs;
        const std::size_t n_pairs = rng.uniform_below(n / 2 + 1);
        for (std::size_t p = 0; p < n_pairs; ++p) pairs.push_back({perm[2 * p], perm[2 * p + 1]});
        const GossipMatrix w(Matching::from_pairs(n, pairs));
        const MaskStream m = generate_mask(rng.next(), 1 + static_cast<std::uint32_t>(rng.uniform_below(4)), dims);
        Eigen::MatrixXd mm(dims, n);
        for (std::size_t j = 0; j < dims; ++j) mm.row(static_cast<Eigen::Index>(j)).setConstant(m.included(j) ? 1.0 : 0.0);
        const Eigen::MatrixXd lhs = a.cwiseProduct(mm) * w.weights();
        const Eigen::MatrixXd rhs = (a * w.weights()).cwiseProduct(mm);
        REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-12);
        ++instances;
      }
    }
  }
  CHECK(instances >= 1000);
}

TEST_CASE("payload codec") {
  SplitMix64 rng(8);
  SparsePayload p{77, 5, {}};
  for (int i = 0; i < 1000; ++i) p.values.push_back(rng.normal());
  const wire::Bytes b = encode_payload(p);
  CHECK(b.size() == payload_frame_size(1000));
  CHECK(decode_payload(b) == p);

  wire::Bytes bad = b;
  bad[wire::kHeaderSize + 40] ^= 0x10;
  CHECK(fault_of(bad) == ProtocolFault::kCrcMismatch);

  const wire::Bytes cut(b.begin(), b.begin() + wire::kHeaderSize);
  CHECK(fault_of(cut) == ProtocolFault::kTruncated);

  const SparsePayload empty{1, 2, {}};
  CHECK(decode_payload(encode_payload(empty)) == empty);
  CHECK(encode_payload(empty).size() == 30);
}

TEST_CASE("bytes per round average N/c values") {
  const std::size_t dims = 5000;
  const std::uint32_t c = 10;
  SplitMix64 seeds(3);
  double total = 0;
  const int rounds = 200;
  for (int t = 0; t < rounds; ++t) total += static_cast<double>(generate_mask(seeds.next(), c, dims).count());
  const double expected = static_cast<double>(dims) / c * rounds;
  CHECK(std::abs(total - expected) / expected < 0.05);
}
