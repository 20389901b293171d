#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace idiombed {

namespace fs = std::filesystem;

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Error taxonomy maps onto the CLI exit codes: validation 1, integrity 2,
// upstream-missing 3.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

class IntegrityError : public std::runtime_error {
 public:
  explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

class UpstreamMissingError : public std::runtime_error {
 public:
  explicit UpstreamMissingError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Hashing (FNV-1a 64). Used for frozen-weight checksums, config hashes and
// artifact content hashes in manifests.

class Fnv64 {
 public:
  void update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 1099511628211ULL;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  void update(uint64_t v) { update(&v, sizeof v); }
  void update(double v) { update(&v, sizeof v); }
  uint64_t digest() const { return h_; }

 private:
  uint64_t h_ = 1469598103934665603ULL;
};

inline uint64_t hash_bytes(const void* data, size_t n) {
  Fnv64 h;
  h.update(data, n);
  return h.digest();
}

inline uint64_t hash_string(const std::string& s) { return hash_bytes(s.data(), s.size()); }

inline uint64_t hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file for hashing: " + path.string());
  Fnv64 h;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h.update(buf, static_cast<size_t>(in.gcount()));
  }
  return h.digest();
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Deterministic randomness. The engine is the standard mt19937_64 (bit-exact
// across platforms); the distributions are written out here because the
// standard library leaves distribution algorithms implementation-defined.

using Rng = std::mt19937_64;

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 0x632be59bd9b4e019ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

inline uint64_t mix_seed(uint64_t a, const std::string& tag) {
  return mix_seed(a, hash_string(tag));
}

inline uint64_t mix_seed(uint64_t a, const std::string& tag, uint64_t c) {
  return mix_seed(mix_seed(a, hash_string(tag)), c);
}

// Uniform in [0, 1).
inline double uniform_real(Rng& g) {
  return static_cast<double>(g() >> 11) * (1.0 / 9007199254740992.0);
}

// Unbiased uniform integer in [0, n).
inline uint64_t uniform_below(Rng& g, uint64_t n) {
  if (n == 0) throw ValidationError("uniform_below: n must be positive");
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t v;
  do {
    v = g();
  } while (v >= limit);
  return v % n;
}

// Knuth's product-of-uniforms sampler; fine for small lambda.
inline int poisson_sample(Rng& g, double lambda) {
  if (lambda <= 0.0) throw ValidationError("poisson_sample: lambda must be positive");
  const double threshold = std::exp(-lambda);
  int k = 0;
  double p = 1.0;
  do {
    ++k;
    p *= uniform_real(g);
  } while (p > threshold);
  return k - 1;
}

// Box-Muller, consuming two uniforms per draw.
inline double normal_sample(Rng& g) {
  double u1 = uniform_real(g);
  double u2 = uniform_real(g);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename T>
inline void shuffle_indices(std::vector<T>& v, Rng& g) {
  for (size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_below(g, i)]);
  }
}

// ---------------------------------------------------------------------------
// Cosine similarity; throws on zero-norm inputs rather than returning NaN.

inline double cosine_similarity(const Vec& u, const Vec& v) {
  if (u.size() != v.size()) throw ValidationError("cosine_similarity: dimension mismatch");
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw ValidationError("cosine_similarity: zero-norm vector");
  return u.dot(v) / (nu * nv);
}

inline double cosine_distance(const Vec& u, const Vec& v) {
  return 1.0 - cosine_similarity(u, v);
}

// ---------------------------------------------------------------------------
// File helpers. Artifacts are written to a temp path then renamed so a
// crashed command never leaves a half-written artifact behind.

inline void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write file: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ValidationError("short write: " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Little-endian binary encoders for the bank/checkpoint formats.
inline void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

// Cursor-based decoder; every read is bounds-checked so truncation surfaces
// as an IntegrityError instead of UB.
class ByteReader {
 public:
  ByteReader(const std::string& data, std::string what)
      : data_(data), what_(std::move(what)) {}

  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint32_t u32() {
    const char* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    const char* p = take(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    return std::string(take(n), n);
  }
  size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  const char* take(size_t n) {
    if (pos_ + n > data_.size()) throw IntegrityError(what_ + ": truncated data");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::string& data_;
  std::string what_;
  size_t pos_ = 0;
};

inline std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace idiombed
