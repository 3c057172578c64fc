#include "lwfm/spm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "lwfm/errors.hpp"

namespace lwfm {
namespace {

void require_square(const Matrix& m, const char* who) {
  if (!m.square() || m.rows() == 0) {
    throw std::invalid_argument(std::string(who) +
                                ": matrix must be square and non-empty");
  }
}

}  // namespace

MatchingMatrix matching_matrix(const PixelMatrix& support,
                               const PixelMatrix& query) {
  if (support.n() != query.n() || support.c() != query.c()) {
    throw std::invalid_argument("matching_matrix: shape mismatch");
  }
  const std::size_t n = support.n();
  // Row norms once; cosine() would recompute them n times.
  std::vector<double> sn(n), qn(n);
  for (std::size_t i = 0; i < n; ++i) {
    sn[i] = norm(support.row(i));
    qn[i] = norm(query.row(i));
  }
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (sn[i] < kCosineEpsilon || qn[j] < kCosineEpsilon) continue;
      m(i, j) = dot(support.row(i), query.row(j)) / (sn[i] * qn[j]);
    }
  }
  return {std::move(m)};
}

std::vector<std::size_t> solve_min_cost_assignment(const Matrix& cost) {
  require_square(cost, "solve_min_cost_assignment");
  for (double v : cost.values()) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument(
          "solve_min_cost_assignment: cost entries must be finite");
    }
  }
  const std::size_t n = cost.rows();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based rows/columns; column 0 is the virtual source of each augmenting
  // search. u, v are the dual potentials, match[j] the row holding column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<double> min_slack(n + 1);
  std::vector<char> used(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t j0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (reduced < min_slack[j]) {
          min_slack[j] = reduced;
          way[j] = j0;
        }
        // Strict comparison: the lowest column wins ties.
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> perm(n);
  for (std::size_t j = 1; j <= n; ++j) perm[match[j] - 1] = j - 1;
  return perm;
}

Assignment hungarian_assign(const MatchingMatrix& m) {
  require_square(m.values, "hungarian_assign");
  const std::size_t n = m.n();
  Matrix cost(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost(i, j) = 1.0 - m.values(i, j);
  }
  return {solve_min_cost_assignment(cost), AssignMethod::kHungarian};
}

Assignment nn_assign(const MatchingMatrix& m) {
  require_square(m.values, "nn_assign");
  const std::size_t n = m.n();
  Assignment a{std::vector<std::size_t>(n), AssignMethod::kNearestNeighbor};
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (m.values(i, j) > m.values(i, best)) best = j;
    }
    a.perm[i] = best;
  }
  return a;
}

Assignment greedy_repair(const MatchingMatrix& m) {
  const Assignment nn = nn_assign(m);
  const std::size_t n = m.n();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return m.values(a, nn.perm[a]) > m.values(b, nn.perm[b]);
  });
  std::vector<char> taken(n, 0);
  Assignment out{std::vector<std::size_t>(n), AssignMethod::kGreedyRepair};
  for (std::size_t i : order) {
    std::size_t best = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      if (best == n || m.values(i, j) > m.values(i, best)) best = j;
    }
    taken[best] = 1;
    out.perm[i] = best;
  }
  return out;
}

double total_similarity(const MatchingMatrix& m, const Assignment& a) {
  if (a.n() != m.n()) {
    throw std::invalid_argument("total_similarity: size mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.n(); ++i) s += m.values(i, a.perm.at(i));
  return s;
}

PixelMatrix rearrange(const PixelMatrix& query, const Assignment& a) {
  if (a.n() != query.n()) {
    throw std::invalid_argument("rearrange: assignment size mismatch");
  }
  const std::size_t c = query.c();
  std::vector<double> out(query.n() * c);
  for (std::size_t i = 0; i < a.n(); ++i) {
    if (a.perm[i] >= query.n()) {
      throw std::invalid_argument("rearrange: index " +
                                  std::to_string(a.perm[i]) + " out of range");
    }
    auto src = query.row(a.perm[i]);
    std::copy(src.begin(), src.end(), out.begin() + i * c);
  }
  return PixelMatrix(query.n(), c, std::move(out));
}

std::size_t LayerMatcher::hidden_width(std::size_t channels) {
  return std::max<std::size_t>(1, channels / 2);
}

LayerMatcher LayerMatcher::zeros(std::uint32_t layer_id, std::size_t channels) {
  if (channels == 0) {
    throw std::invalid_argument("LayerMatcher: channels must be >= 1");
  }
  const std::size_t hidden = hidden_width(channels);
  return {layer_id,
          channels,
          hidden,
          std::vector<double>(channels * hidden, 0.0),
          std::vector<double>(hidden, 0.0),
          std::vector<double>(hidden * channels, 0.0),
          std::vector<double>(channels, 0.0)};
}

const LayerMatcher* MatcherParams::find(std::uint32_t layer_id) const {
  for (const LayerMatcher& l : layers) {
    if (l.layer_id == layer_id) return &l;
  }
  return nullptr;
}

LayerMatcher* MatcherParams::find(std::uint32_t layer_id) {
  for (LayerMatcher& l : layers) {
    if (l.layer_id == layer_id) return &l;
  }
  return nullptr;
}

MatcherParams init_matcher(std::span<const LayerChannels> layers,
                           std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MatcherParams params;
  for (const LayerChannels& lc : layers) {
    LayerMatcher l = LayerMatcher::zeros(lc.layer_id, lc.channels);
    std::uniform_real_distribution<double> u1(
        -1.0 / std::sqrt(static_cast<double>(l.channels)),
        1.0 / std::sqrt(static_cast<double>(l.channels)));
    for (double& w : l.w1) w = u1(rng);
    std::uniform_real_distribution<double> u2(
        -1.0 / std::sqrt(static_cast<double>(l.hidden)),
        1.0 / std::sqrt(static_cast<double>(l.hidden)));
    for (double& w : l.w2) w = u2(rng);
    params.layers.push_back(std::move(l));
  }
  return params;
}

PixelMatrix matcher_forward(const PixelMatrix& x, const LayerMatcher& p,
                            MatcherActivations* activations) {
  if (x.c() != p.channels || p.w1.size() != p.channels * p.hidden ||
      p.b1.size() != p.hidden || p.w2.size() != p.hidden * p.channels ||
      p.b2.size() != p.channels) {
    throw std::invalid_argument("matcher_forward: dimension mismatch (input c=" +
                                std::to_string(x.c()) + ", matcher c=" +
                                std::to_string(p.channels) + ")");
  }
  const std::size_t n = x.n(), c = p.channels, h = p.hidden;
  Matrix hidden_pre(n, h);
  Matrix out_pre(n, c);
  std::vector<double> out(x.values().begin(), x.values().end());
  std::vector<double> hid(h);
  for (std::size_t r = 0; r < n; ++r) {
    auto v = x.row(r);
    for (std::size_t k = 0; k < h; ++k) hid[k] = p.b1[k];
    for (std::size_t i = 0; i < c; ++i) {
      const double vi = v[i];
      const double* w = p.w1.data() + i * h;
      for (std::size_t k = 0; k < h; ++k) hid[k] += vi * w[k];
    }
    for (std::size_t k = 0; k < h; ++k) {
      hidden_pre(r, k) = hid[k];
      hid[k] = std::max(hid[k], 0.0);
    }
    for (std::size_t j = 0; j < c; ++j) out_pre(r, j) = p.b2[j];
    for (std::size_t k = 0; k < h; ++k) {
      if (hid[k] == 0.0) continue;
      const double* w = p.w2.data() + k * c;
      for (std::size_t j = 0; j < c; ++j) out_pre(r, j) += hid[k] * w[j];
    }
    for (std::size_t j = 0; j < c; ++j) {
      out[r * c + j] += std::max(out_pre(r, j), 0.0);
    }
  }
  if (activations != nullptr) {
    activations->hidden_pre = std::move(hidden_pre);
    activations->out_pre = std::move(out_pre);
  }
  return PixelMatrix(n, c, std::move(out));
}

namespace {

constexpr char kMatcherMagic[4] = {'M', 'P', 'A', 'R'};
constexpr std::uint32_t kMatcherVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void put_f32s(std::vector<std::uint8_t>& out, const std::vector<double>& vs) {
  for (double v : vs) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

class MparReader {
 public:
  explicit MparReader(std::vector<std::uint8_t> bytes)
      : bytes_(std::move(bytes)) {}

  std::uint32_t u32(const char* what) {
    if (bytes_.size() - pos_ < 4) {
      throw FormatError(std::string("MPAR: truncated at offset ") +
                        std::to_string(pos_) + " while reading " + what);
    }
    std::uint32_t v = 0;
    for (int s = 0; s < 4; ++s) {
      v |= static_cast<std::uint32_t>(bytes_[pos_ + s]) << (8 * s);
    }
    pos_ += 4;
    return v;
  }
  void f32s(std::vector<double>& out, const char* what) {
    for (double& v : out) {
      const float f = std::bit_cast<float>(u32(what));
      if (!std::isfinite(f)) {
        throw ValidationError(std::string("MPAR: non-finite ") + what);
      }
      v = f;
    }
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t offset() const { return pos_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_matcher(const MatcherParams& params,
                   const std::filesystem::path& path) {
  std::vector<std::uint8_t> out(kMatcherMagic, kMatcherMagic + 4);
  put_u32(out, kMatcherVersion);
  put_u32(out, static_cast<std::uint32_t>(params.layers.size()));
  put_u32(out, 0);
  for (const LayerMatcher& l : params.layers) {
    if (l.hidden != LayerMatcher::hidden_width(l.channels) ||
        l.w1.size() != l.channels * l.hidden || l.b1.size() != l.hidden ||
        l.w2.size() != l.hidden * l.channels || l.b2.size() != l.channels) {
      throw std::invalid_argument("write_matcher: inconsistent layer " +
                                  std::to_string(l.layer_id));
    }
    put_u32(out, l.layer_id);
    put_u32(out, static_cast<std::uint32_t>(l.channels));
    put_f32s(out, l.w1);
    put_f32s(out, l.b1);
    put_f32s(out, l.w2);
    put_f32s(out, l.b2);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

MatcherParams read_matcher(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMatcherMagic, 4) != 0) {
    throw FormatError("MPAR: bad magic in " + path.string());
  }
  MparReader in(std::move(bytes));
  in.u32("magic");
  const std::uint32_t version = in.u32("version");
  if (version != kMatcherVersion) {
    throw FormatError("MPAR: unsupported version " + std::to_string(version));
  }
  const std::uint32_t layer_count = in.u32("layer_count");
  in.u32("reserved");
  MatcherParams params;
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const std::uint32_t id = in.u32("layer_id");
    const std::uint32_t c = in.u32("channels");
    if (c == 0) throw FormatError("MPAR: zero channel count");
    const std::size_t h = LayerMatcher::hidden_width(c);
    const std::size_t need = (2 * std::size_t{c} * h + h + c) * 4;
    if (in.remaining() < need) {
      throw FormatError("MPAR: truncated at offset " +
                        std::to_string(in.offset()) + " in layer " +
                        std::to_string(id) + " parameters");
    }
    if (params.find(id) != nullptr) {
      throw ValidationError("MPAR: duplicate layer " + std::to_string(id));
    }
    LayerMatcher l = LayerMatcher::zeros(id, c);
    in.f32s(l.w1, "W1");
    in.f32s(l.b1, "b1");
    in.f32s(l.w2, "W2");
    in.f32s(l.b2, "b2");
    params.layers.push_back(std::move(l));
  }
  if (!in.at_end()) {
    throw FormatError("MPAR: trailing bytes at offset " +
                      std::to_string(in.offset()));
  }
  return params;
}

}  // namespace lwfm
