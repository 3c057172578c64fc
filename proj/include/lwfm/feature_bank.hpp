#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "lwfm/tensor.hpp"

namespace lwfm {

struct MapDims {
  std::uint32_t h = 0;
  std::uint32_t w = 0;
  std::uint32_t c = 0;

  friend bool operator==(const MapDims&, const MapDims&) = default;
};

/// All images' activations at one backbone block.
struct BankLayer {
  std::uint32_t layer_id = 0;
  MapDims dims;
  std::vector<FeatureMap> maps;  // one per image, bank image order

  friend bool operator==(const BankLayer&, const BankLayer&) = default;
};

/// Per-layer feature maps of a labelled image set. Every layer holds the
/// same images in the same order; labels are stored once for all layers.
struct FeatureBank {
  std::vector<BankLayer> layers;
  std::vector<std::uint32_t> labels;
  std::uint32_t class_count = 0;

  std::size_t image_count() const { return labels.size(); }
  /// Index into `layers` for a block id, or throws ConfigError.
  std::size_t layer_index(std::uint32_t layer_id) const;
  /// Image indices grouped by label.
  std::vector<std::vector<std::size_t>> images_by_class() const;

  friend bool operator==(const FeatureBank&, const FeatureBank&) = default;
};

/// Throws ValidationError (or FormatError for structural problems such as an
/// empty layer list) if `bank` breaks a FeatureBank invariant.
void validate_bank(const FeatureBank& bank);

/// Serialises to the FBNK1 layout:
///   "FBNK" | u32 version=1 | u32 layer_count | u32 image_count |
///   u32 class_count | u32 labels[image_count] |
///   per layer: u32 layer_id, h, w, c, f32 payload[image_count*h*w*c]
/// All fields little-endian; payload image-major then (row, col, channel).
std::vector<std::uint8_t> encode_bank(const FeatureBank& bank);
FeatureBank decode_bank(std::span<const std::uint8_t> bytes);

void write_bank(const FeatureBank& bank, const std::filesystem::path& path);
FeatureBank read_bank(const std::filesystem::path& path);

struct SyntheticLayer {
  std::uint32_t layer_id = 0;
  MapDims dims;
};

struct SyntheticSpec {
  std::uint32_t class_count = 20;
  std::uint32_t images_per_class = 20;
  std::vector<SyntheticLayer> layers;
  double prototype_scale = 10.0;
  double noise_scale = 1.0;
  std::uint64_t seed = 7;
};

/// Class prototypes drawn N(0, prototype_scale^2) per layer, images are
/// prototype + noise_scale * N(0, 1). Values are rounded to 32-bit so that
/// a generated bank survives an FBNK1 round trip unchanged.
FeatureBank gen_synthetic_bank(const SyntheticSpec& spec);

/// Parses "7:3x3x256,8:3x3x512".
std::vector<SyntheticLayer> parse_layer_dims(const std::string& text);

}  // namespace lwfm
