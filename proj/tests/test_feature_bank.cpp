#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "lwfm/errors.hpp"
#include "lwfm/feature_bank.hpp"
#include "test_util.hpp"

namespace lwfm {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() /
         ("lwfm_fb_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

FeatureBank small_bank() {
  FeatureBank bank;
  bank.class_count = 2;
  bank.labels = {0, 1, 1};
  BankLayer layer;
  layer.layer_id = 7;
  layer.dims = {1, 2, 2};
  layer.maps = {FeatureMap(1, 2, 2, {1, 2, 3, 4}),
                FeatureMap(1, 2, 2, {-1, 0.5, 0, 8}),
                FeatureMap(1, 2, 2, {0.25, 0.25, 0.25, -0.25})};
  bank.layers.push_back(layer);
  return bank;
}

TEST(Fbnk1, FileRoundTrip) {
  const FeatureBank bank = small_bank();
  const fs::path p = temp_path("rt.fbnk");
  write_bank(bank, p);
  EXPECT_EQ(read_bank(p), bank);
  fs::remove(p);
}

TEST(Fbnk1, RandomBanksRoundTripByteIdentical) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const FeatureBank bank = testing::random_bank(rng);
    const auto bytes = encode_bank(bank);
    const FeatureBank back = decode_bank(bytes);
    EXPECT_EQ(back, bank);
    EXPECT_EQ(encode_bank(back), bytes);
  }
}

TEST(Fbnk1, HeaderLayoutIsLittleEndian) {
  const auto bytes = encode_bank(small_bank());
  std::vector<std::uint8_t> expect = {'F', 'B', 'N', 'K', 1, 0, 0, 0,  // version
                                      1, 0, 0, 0,                      // layers
                                      3, 0, 0, 0,                      // images
                                      2, 0, 0, 0,                      // classes
                                      0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0,
                                      7, 0, 0, 0, 1, 0, 0, 0,
                                      2, 0, 0, 0, 2, 0, 0, 0};
  ASSERT_EQ(bytes.size(), expect.size() + 12 * 4);
  EXPECT_TRUE(std::equal(expect.begin(), expect.end(), bytes.begin()));
  // 1.0f = 0x3f800000, first payload value.
  const std::size_t off = expect.size();
  EXPECT_EQ(bytes[off + 0], 0x00);
  EXPECT_EQ(bytes[off + 1], 0x00);
  EXPECT_EQ(bytes[off + 2], 0x80);
  EXPECT_EQ(bytes[off + 3], 0x3f);
}

TEST(Fbnk1, WritesAreByteIdentical) {
  const FeatureBank bank = small_bank();
  const fs::path a = temp_path("a.fbnk"), b = temp_path("b.fbnk");
  write_bank(bank, a);
  write_bank(read_bank(a), b);
  EXPECT_EQ(slurp(a), slurp(b));
  fs::remove(a);
  fs::remove(b);
}

TEST(Fbnk1, EmptyLayerListIsFormatError) {
  FeatureBank bank = small_bank();
  bank.layers.clear();
  EXPECT_THROW(encode_bank(bank), FormatError);
  EXPECT_THROW(write_bank(bank, temp_path("never.fbnk")), FormatError);
}

TEST(Fbnk1, BadMagic) {
  auto bytes = encode_bank(small_bank());
  std::memcpy(bytes.data(), "XXXX", 4);
  EXPECT_THROW(decode_bank(bytes), FormatError);
}

TEST(Fbnk1, BadVersion) {
  auto bytes = encode_bank(small_bank());
  bytes[4] = 2;
  EXPECT_THROW(decode_bank(bytes), FormatError);
}

TEST(Fbnk1, TruncationNamesOffset) {
  const auto bytes = encode_bank(small_bank());
  for (std::size_t cut : {std::size_t{2}, std::size_t{10}, std::size_t{30},
                          bytes.size() - 1}) {
    std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + cut);
    try {
      decode_bank(part);
      FAIL() << "decoded a truncated buffer of " << cut << " bytes";
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos)
          << e.what();
    }
  }
}

TEST(Fbnk1, TrailingBytesRejected) {
  auto bytes = encode_bank(small_bank());
  bytes.push_back(0);
  EXPECT_THROW(decode_bank(bytes), FormatError);
}

TEST(Fbnk1, HugeDimsDoNotAllocate) {
  auto bytes = encode_bank(small_bank());
  // h field of the only layer.
  const std::size_t h_off = 20 + 3 * 4 + 4;
  for (int i = 0; i < 4; ++i) bytes[h_off + i] = 0xff;
  EXPECT_THROW(decode_bank(bytes), FormatError);
}

TEST(Fbnk1, NonFinitePayloadIsValidationError) {
  auto bytes = encode_bank(small_bank());
  const float inf = std::numeric_limits<float>::infinity();
  std::memcpy(bytes.data() + bytes.size() - 4, &inf, 4);
  EXPECT_THROW(decode_bank(bytes), ValidationError);
}

TEST(Fbnk1, LabelOutOfRange) {
  FeatureBank bank = small_bank();
  bank.labels[1] = 2;
  EXPECT_THROW(validate_bank(bank), ValidationError);
  EXPECT_THROW(write_bank(bank, temp_path("bad.fbnk")), ValidationError);

  auto bytes = encode_bank(small_bank());
  bytes[20 + 4] = 5;
  EXPECT_THROW(decode_bank(bytes), ValidationError);
}

TEST(Fbnk1, DuplicateLayerAndDimMismatch) {
  FeatureBank bank = small_bank();
  bank.layers.push_back(bank.layers.front());
  EXPECT_THROW(validate_bank(bank), ValidationError);

  bank = small_bank();
  bank.layers[0].dims.c = 3;
  EXPECT_THROW(validate_bank(bank), ValidationError);

  bank = small_bank();
  bank.layers[0].maps.pop_back();
  EXPECT_THROW(validate_bank(bank), ValidationError);
}

TEST(Fbnk1, MissingFileIsIoError) {
  EXPECT_THROW(read_bank(temp_path("does_not_exist.fbnk")), IoError);
}

TEST(FeatureBank, LayerLookupAndGrouping) {
  const FeatureBank bank = small_bank();
  EXPECT_EQ(bank.layer_index(7), 0u);
  EXPECT_THROW(bank.layer_index(8), ConfigError);
  const auto groups = bank.images_by_class();
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0], (std::vector<std::size_t>{0}));
  EXPECT_EQ(groups[1], (std::vector<std::size_t>{1, 2}));
}

SyntheticSpec tiny_spec() {
  SyntheticSpec spec;
  spec.class_count = 4;
  spec.images_per_class = 3;
  spec.layers = {{7, {3, 3, 4}}, {8, {2, 2, 6}}};
  return spec;
}

TEST(Synthetic, DeterministicAndShaped) {
  const FeatureBank a = gen_synthetic_bank(tiny_spec());
  const FeatureBank b = gen_synthetic_bank(tiny_spec());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.image_count(), 12u);
  EXPECT_EQ(a.class_count, 4u);
  EXPECT_EQ(a.layers[1].dims, (MapDims{2, 2, 6}));
  EXPECT_NO_THROW(validate_bank(a));

  SyntheticSpec other = tiny_spec();
  other.seed = 8;
  EXPECT_NE(gen_synthetic_bank(other), a);
}

TEST(Synthetic, SurvivesRoundTrip) {
  const FeatureBank a = gen_synthetic_bank(tiny_spec());
  EXPECT_EQ(decode_bank(encode_bank(a)), a);
}

TEST(Synthetic, NoiseFreeImagesEqualTheirPrototype) {
  SyntheticSpec spec = tiny_spec();
  spec.noise_scale = 0.0;
  const FeatureBank bank = gen_synthetic_bank(spec);
  const auto groups = bank.images_by_class();
  for (const BankLayer& layer : bank.layers) {
    for (const auto& members : groups) {
      for (std::size_t i : members) {
        EXPECT_EQ(layer.maps[i], layer.maps[members.front()]);
      }
    }
    EXPECT_NE(layer.maps[groups[0].front()], layer.maps[groups[1].front()]);
  }
}

TEST(Synthetic, ParseLayerDims) {
  const auto layers = parse_layer_dims("7:3x3x256,8:3x3x512");
  ASSERT_EQ(layers.size(), 2u);
  EXPECT_EQ(layers[0].layer_id, 7u);
  EXPECT_EQ(layers[1].dims, (MapDims{3, 3, 512}));
  EXPECT_THROW(parse_layer_dims("7:3x3"), std::invalid_argument);
  EXPECT_THROW(parse_layer_dims(""), std::invalid_argument);
  EXPECT_THROW(parse_layer_dims("a:1x1x1"), std::invalid_argument);
}

}  // namespace
}  // namespace lwfm
