#include "lwfm/feature_bank.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "lwfm/errors.hpp"

namespace lwfm {
namespace {

constexpr char kMagic[4] = {'F', 'B', 'N', 'K'};
constexpr std::uint32_t kVersion = 1;

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out_.push_back(static_cast<std::uint8_t>(v >> s));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      std::ostringstream msg;
      msg << "FBNK1: truncated at offset " << pos_ << " while reading " << what
          << " (need " << n << " bytes, " << bytes_.size() - pos_
          << " remain)";
      throw FormatError(msg.str());
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int s = 0; s < 4; ++s) {
      v |= static_cast<std::uint32_t>(bytes_[pos_ + s]) << (8 * s);
    }
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::span<const std::uint8_t> raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void validate_values(const FeatureMap& m, std::uint32_t layer_id) {
  for (double v : m.values()) {
    // Every payload value must be representable as a finite 32-bit float.
    if (!std::isfinite(static_cast<float>(v))) {
      throw ValidationError("layer " + std::to_string(layer_id) +
                            ": value not representable as finite float32");
    }
  }
}

}  // namespace

std::size_t FeatureBank::layer_index(std::uint32_t layer_id) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].layer_id == layer_id) return i;
  }
  throw ConfigError("feature bank has no layer " + std::to_string(layer_id));
}

std::vector<std::vector<std::size_t>> FeatureBank::images_by_class() const {
  std::vector<std::vector<std::size_t>> by_class(class_count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class.at(labels[i]).push_back(i);
  }
  return by_class;
}

void validate_bank(const FeatureBank& bank) {
  if (bank.layers.empty()) {
    throw FormatError("FBNK1: bank has no layers");
  }
  for (std::size_t i = 0; i < bank.labels.size(); ++i) {
    if (bank.labels[i] >= bank.class_count) {
      throw ValidationError("label " + std::to_string(bank.labels[i]) +
                            " of image " + std::to_string(i) +
                            " is outside [0, " +
                            std::to_string(bank.class_count) + ")");
    }
  }
  std::set<std::uint32_t> seen;
  for (const BankLayer& layer : bank.layers) {
    if (!seen.insert(layer.layer_id).second) {
      throw ValidationError("duplicate layer id " +
                            std::to_string(layer.layer_id));
    }
    if (layer.dims.h == 0 || layer.dims.w == 0 || layer.dims.c == 0) {
      throw ValidationError("layer " + std::to_string(layer.layer_id) +
                            ": zero dimension");
    }
    if (layer.maps.size() != bank.labels.size()) {
      throw ValidationError("layer " + std::to_string(layer.layer_id) +
                            " holds " + std::to_string(layer.maps.size()) +
                            " images, expected " +
                            std::to_string(bank.labels.size()));
    }
    for (const FeatureMap& m : layer.maps) {
      if (m.h() != layer.dims.h || m.w() != layer.dims.w ||
          m.c() != layer.dims.c) {
        throw ValidationError("layer " + std::to_string(layer.layer_id) +
                              ": map dims differ from layer dims");
      }
      validate_values(m, layer.layer_id);
    }
  }
}

std::vector<std::uint8_t> encode_bank(const FeatureBank& bank) {
  validate_bank(bank);
  ByteWriter out;
  out.raw(kMagic, sizeof kMagic);
  out.u32(kVersion);
  out.u32(static_cast<std::uint32_t>(bank.layers.size()));
  out.u32(static_cast<std::uint32_t>(bank.labels.size()));
  out.u32(bank.class_count);
  for (std::uint32_t label : bank.labels) out.u32(label);
  for (const BankLayer& layer : bank.layers) {
    out.u32(layer.layer_id);
    out.u32(layer.dims.h);
    out.u32(layer.dims.w);
    out.u32(layer.dims.c);
    for (const FeatureMap& m : layer.maps) {
      for (double v : m.values()) out.f32(static_cast<float>(v));
    }
  }
  return out.take();
}

FeatureBank decode_bank(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  auto magic = in.raw(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError("FBNK1: bad magic");
  }
  const std::uint32_t version = in.u32("version");
  if (version != kVersion) {
    throw FormatError("FBNK1: unsupported version " + std::to_string(version));
  }
  const std::uint32_t layer_count = in.u32("layer_count");
  const std::uint32_t image_count = in.u32("image_count");

  FeatureBank bank;
  bank.class_count = in.u32("class_count");
  // Size check before allocating so a corrupt count cannot trigger a huge
  // allocation.
  in.need(static_cast<std::size_t>(image_count) * 4, "labels");
  bank.labels.reserve(image_count);
  for (std::uint32_t i = 0; i < image_count; ++i) {
    bank.labels.push_back(in.u32("labels"));
  }
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    BankLayer layer;
    layer.layer_id = in.u32("layer_id");
    layer.dims.h = in.u32("h");
    layer.dims.w = in.u32("w");
    layer.dims.c = in.u32("c");
    std::size_t per_image = 0;
    std::size_t payload_bytes = 0;
    if (__builtin_mul_overflow(static_cast<std::size_t>(layer.dims.h),
                               static_cast<std::size_t>(layer.dims.w),
                               &per_image) ||
        __builtin_mul_overflow(per_image, std::size_t{layer.dims.c},
                               &per_image) ||
        __builtin_mul_overflow(per_image, std::size_t{image_count} * 4,
                               &payload_bytes)) {
      throw FormatError("FBNK1: layer dims overflow at offset " +
                        std::to_string(in.offset()));
    }
    if (per_image == 0) {
      throw ValidationError("layer " + std::to_string(layer.layer_id) +
                            ": zero dimension");
    }
    in.need(payload_bytes, "layer payload");
    layer.maps.reserve(image_count);
    for (std::uint32_t img = 0; img < image_count; ++img) {
      std::vector<double> values(per_image);
      for (double& v : values) {
        const float f = in.f32("layer payload");
        if (!std::isfinite(f)) {
          throw ValidationError("layer " + std::to_string(layer.layer_id) +
                                ": non-finite payload value before offset " +
                                std::to_string(in.offset()));
        }
        v = static_cast<double>(f);
      }
      layer.maps.emplace_back(layer.dims.h, layer.dims.w, layer.dims.c,
                              std::move(values));
    }
    bank.layers.push_back(std::move(layer));
  }
  if (in.remaining() != 0) {
    throw FormatError("FBNK1: " + std::to_string(in.remaining()) +
                      " trailing bytes at offset " +
                      std::to_string(in.offset()));
  }
  validate_bank(bank);
  return bank;
}

void write_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_bank(bank);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

FeatureBank read_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return decode_bank(bytes);
}

FeatureBank gen_synthetic_bank(const SyntheticSpec& spec) {
  if (!(spec.prototype_scale > 0.0) || !(spec.noise_scale >= 0.0)) {
    throw std::invalid_argument(
        "gen_synthetic_bank: need prototype_scale > 0 and noise_scale >= 0");
  }
  if (spec.layers.empty()) {
    throw std::invalid_argument("gen_synthetic_bank: no layers requested");
  }
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  FeatureBank bank;
  bank.class_count = spec.class_count;
  for (std::uint32_t k = 0; k < spec.class_count; ++k) {
    for (std::uint32_t i = 0; i < spec.images_per_class; ++i) {
      bank.labels.push_back(k);
    }
  }
  for (const SyntheticLayer& sl : spec.layers) {
    const std::size_t size =
        static_cast<std::size_t>(sl.dims.h) * sl.dims.w * sl.dims.c;
    BankLayer layer{sl.layer_id, sl.dims, {}};
    for (std::uint32_t k = 0; k < spec.class_count; ++k) {
      std::vector<double> prototype(size);
      for (double& v : prototype) v = spec.prototype_scale * normal(rng);
      for (std::uint32_t i = 0; i < spec.images_per_class; ++i) {
        std::vector<double> image(size);
        for (std::size_t e = 0; e < size; ++e) {
          const double noise = spec.noise_scale * normal(rng);
          image[e] = static_cast<double>(static_cast<float>(prototype[e] + noise));
        }
        layer.maps.emplace_back(sl.dims.h, sl.dims.w, sl.dims.c,
                                std::move(image));
      }
    }
    bank.layers.push_back(std::move(layer));
  }
  return bank;
}

std::vector<SyntheticLayer> parse_layer_dims(const std::string& text) {
  std::vector<SyntheticLayer> layers;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    SyntheticLayer layer;
    char colon = 0, x1 = 0, x2 = 0;
    std::istringstream is(item);
    if (!(is >> layer.layer_id >> colon >> layer.dims.h >> x1 >> layer.dims.w >>
          x2 >> layer.dims.c) ||
        colon != ':' || x1 != 'x' || x2 != 'x' || !(is >> std::ws).eof() ||
        layer.dims.h == 0 || layer.dims.w == 0 || layer.dims.c == 0) {
      throw std::invalid_argument("bad layer spec '" + item +
                                  "', expected id:HxWxC");
    }
    layers.push_back(layer);
  }
  if (layers.empty()) throw std::invalid_argument("empty layer spec");
  return layers;
}

}  // namespace lwfm
