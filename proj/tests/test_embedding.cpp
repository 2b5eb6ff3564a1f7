#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "cased/embedding.hpp"
#include "cased/vfeb.hpp"

using namespace cased;

namespace {

Embedding random_embedding(std::mt19937_64& rng, std::size_t dim, double scale = 1.0) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(scale * n(rng));
  return Embedding(std::move(v));
}

template <typename Fn>
void expect_error(ErrorKind kind, Fn&& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

}  // namespace

TEST(Embedding, RejectsEmptyAndNonFinite) {
  expect_error(ErrorKind::InvalidArgument, [] { Embedding(std::vector<float>{}); });
  expect_error(ErrorKind::InvalidArgument, [] { Embedding({1.0f, std::numeric_limits<float>::quiet_NaN()}); });
  expect_error(ErrorKind::InvalidArgument, [] { Embedding({std::numeric_limits<float>::infinity()}); });
}

TEST(Normalize, WorkedExamples) {
  const auto a = l2_normalize(Embedding{3.0f, 4.0f});
  EXPECT_FLOAT_EQ(a[0], 0.6f);
  EXPECT_FLOAT_EQ(a[1], 0.8f);
  EXPECT_EQ(l2_normalize(Embedding{1.0f, 0.0f}), (Embedding{1.0f, 0.0f}));
  expect_error(ErrorKind::ZeroVector, [] { l2_normalize(Embedding{0.0f, 0.0f}); });
  expect_error(ErrorKind::ZeroVector, [] { l2_normalize(Embedding{1e-20f, 0.0f}); });
}

TEST(Normalize, UnitNormAndIdempotent) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 500; ++t) {
    const auto v = random_embedding(rng, 1 + t % 300, std::pow(10.0, (t % 9) - 4));
    const auto u = l2_normalize(v);
    EXPECT_NEAR(l2_norm(u.values()), 1.0, 1e-5);
    const auto uu = l2_normalize(u);
    for (std::size_t i = 0; i < u.dim(); ++i) EXPECT_NEAR(u[i], uu[i], 1e-6);
    // direction preserved
    EXPECT_NEAR(cosine_similarity(u, v), 1.0, 1e-6);
  }
}

TEST(Cosine, WorkedExamples) {
  EXPECT_DOUBLE_EQ(cosine_similarity(Embedding{1, 0}, Embedding{0, 1}), 0.0);
  EXPECT_DOUBLE_EQ(cosine_similarity(Embedding{1, 0}, Embedding{1, 0}), 1.0);
  EXPECT_NEAR(cosine_similarity(Embedding{0.6f, 0.8f}, Embedding{0.8f, 0.6f}), 0.96, 1e-7);
  expect_error(ErrorKind::DimensionMismatch, [] { cosine_similarity(Embedding{1, 0}, Embedding{1, 0, 0}); });
}

TEST(Cosine, SymmetricScaleInvariantBounded) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t dim = 1 + t % 64;
    const auto a = random_embedding(rng, dim);
    const auto b = random_embedding(rng, dim);
    const double ab = cosine_similarity(a, b);
    EXPECT_EQ(ab, cosine_similarity(b, a));
    EXPECT_GE(ab, -1.0);
    EXPECT_LE(ab, 1.0);
    const double s = scale(rng);
    std::vector<float> sa(a.vector());
    for (auto& x : sa) x = static_cast<float>(x * s);
    EXPECT_NEAR(cosine_similarity(Embedding(sa), b), ab, 1e-6);
  }
}

TEST(Dot, MatchesNaiveDoubleSum) {
  std::mt19937_64 rng(3);
  for (std::size_t dim : {1u, 3u, 4u, 5u, 17u, 512u}) {
    const auto a = random_embedding(rng, dim);
    const auto b = random_embedding(rng, dim);
    long double ref = 0;
    for (std::size_t i = 0; i < dim; ++i) ref += static_cast<long double>(a[i]) * b[i];
    EXPECT_NEAR(dot(a.values(), b.values()), static_cast<double>(ref), 1e-12);
  }
}

TEST(Mean, WorkedExamples) {
  const std::vector<Embedding> two{{1, 0}, {0, 1}};
  EXPECT_EQ(mean_embedding(two), (Embedding{0.5f, 0.5f}));
  const std::vector<Embedding> one{{1, 0}};
  EXPECT_EQ(mean_embedding(one), (Embedding{1, 0}));
  std::mt19937_64 rng(4);
  const auto v = random_embedding(rng, 33);
  const std::vector<Embedding> copies(10, v);
  EXPECT_EQ(mean_embedding(copies), v);
  expect_error(ErrorKind::EmptyList, [] { mean_embedding(std::span<const Embedding>()); });
  const std::vector<Embedding> mixed{{1, 0}, {1, 0, 0}};
  expect_error(ErrorKind::DimensionMismatch, [&] { mean_embedding(mixed); });
}

TEST(Mean, NotRenormalized) {
  const std::vector<Embedding> vs{{1, 0}, {-1, 0}, {0, 1}};
  const auto m = mean_embedding(vs);
  EXPECT_NEAR(l2_norm(m.values()), 1.0 / 3.0, 1e-7);
}

// ---- VFEB ----

TEST(Vfeb, HeaderLayout) {
  VfebMatrix m{2, 1, {1.0f, -2.5f}};
  const std::string bytes = encode_vfeb(m);
  ASSERT_EQ(bytes.size(), 28u + 8u);
  EXPECT_EQ(bytes.substr(0, 4), "VFEB");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(p[4], 1);   // version, little-endian
  EXPECT_EQ(p[5] | p[6] | p[7], 0);
  EXPECT_EQ(p[8], 2);   // dim
  EXPECT_EQ(p[12], 1);  // count
  EXPECT_EQ(p[20], 0);  // dtype
  for (int i = 21; i < 28; ++i) EXPECT_EQ(p[i], 0);
  // 1.0f == 0x3f800000, little-endian
  EXPECT_EQ(p[28], 0x00);
  EXPECT_EQ(p[31], 0x3f);
}

TEST(Vfeb, RoundTripIsBitExact) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint32_t> bits;
  VfebMatrix m{7, 13, {}};
  for (std::size_t i = 0; i < 7 * 13; ++i) {
    float f;
    do f = std::bit_cast<float>(bits(rng)); while (!std::isfinite(f));
    m.values.push_back(f);
  }
  const auto path = std::filesystem::temp_directory_path() / "cased_vfeb_roundtrip.vfeb";
  write_vfeb(path, m);
  const auto back = read_vfeb(path);
  EXPECT_EQ(back.dim, m.dim);
  EXPECT_EQ(back.count, m.count);
  ASSERT_EQ(back.values.size(), m.values.size());
  EXPECT_EQ(std::memcmp(back.values.data(), m.values.data(), m.values.size() * 4), 0);
  std::filesystem::remove(path);
}

TEST(Vfeb, EmptyMatrixHasValidHeader) {
  const auto bytes = encode_vfeb(VfebMatrix{16, 0, {}});
  EXPECT_EQ(bytes.size(), 28u);
  const auto back = decode_vfeb(bytes);
  EXPECT_EQ(back.count, 0u);
  EXPECT_EQ(back.dim, 16u);
}

TEST(Vfeb, RejectsMalformed) {
  const std::string good = encode_vfeb(VfebMatrix{2, 2, {1, 2, 3, 4}});
  auto corrupt = [&](std::size_t at, char value) {
    std::string b = good;
    b[at] = value;
    return b;
  };
  expect_error(ErrorKind::FormatError, [&] { decode_vfeb(corrupt(0, 'X')); });
  expect_error(ErrorKind::FormatError, [&] { decode_vfeb(corrupt(4, 2)); });
  expect_error(ErrorKind::FormatError, [&] { decode_vfeb(corrupt(20, 1)); });
  expect_error(ErrorKind::FormatError, [&] { decode_vfeb(good.substr(0, good.size() - 1)); });
  expect_error(ErrorKind::FormatError, [&] { decode_vfeb(good + "xxxx"); });
  expect_error(ErrorKind::FormatError, [&] { decode_vfeb(good.substr(0, 10)); });
  expect_error(ErrorKind::CountMismatch, [] { encode_vfeb(VfebMatrix{2, 2, {1, 2, 3}}); });
}
