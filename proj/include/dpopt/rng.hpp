#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

#include "errors.hpp"

namespace dpopt {

// 64-bit finalizer used to spread user seeds and stream labels.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Snapshot of a stream, small enough to drop into a checkpoint.
struct RngState {
  std::uint64_t key = 0;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;
  std::uint32_t pos = 4;
  double spare = 0.0;
  std::uint8_t have_spare = 0;
};

// Philox4x32-10 counter-based generator.  A stream is identified by
// (key, stream id); blocks are indexed by a 64-bit counter, so streams
// sharing a key but differing in id never overlap and every draw is a
// pure function of (key, id, counter).  That makes runs reproducible
// bit-for-bit regardless of how many draws other streams consumed.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t key, std::uint64_t stream_id)
      : key_(key), stream_(stream_id) {}

  std::uint32_t next_u32() {
    if (pos_ == 4) refill();
    return block_[pos_++];
  }

  std::uint64_t next_u64() {
    std::uint64_t lo = next_u32();
    std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe to pass through log().
  double uniform_pos() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller.  The spare half of each pair is
  // cached, so draws come in a fixed order that survives checkpointing.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  bool bernoulli(double p) {
    if (!(p >= 0.0 && p <= 1.0))
      throw ParameterError("bernoulli probability must lie in [0,1]");
    return uniform() < p;
  }

  // Uniform integer in [0, n) by rejection; n must be positive.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw ParameterError("next_below requires n > 0");
    std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
    for (;;) {
      std::uint64_t v = next_u64();
      if (v < limit) return v % n;
    }
  }

  RngState state() const {
    RngState s;
    s.key = key_;
    s.stream = stream_;
    s.counter = counter_;
    s.pos = static_cast<std::uint32_t>(pos_);
    s.spare = spare_;
    s.have_spare = have_spare_ ? 1 : 0;
    return s;
  }

  static RngStream restore(const RngState& s) {
    RngStream r(s.key, s.stream);
    if (s.pos > 4) throw InputError("corrupt rng state: pos > 4");
    if (s.pos < 4) {
      // Regenerate the block the snapshot was positioned in.
      r.counter_ = s.counter - 1;
      r.refill();
    } else {
      r.counter_ = s.counter;
    }
    r.pos_ = static_cast<int>(s.pos);
    r.spare_ = s.spare;
    r.have_spare_ = s.have_spare != 0;
    return r;
  }

 private:
  void refill() {
    std::array<std::uint32_t, 4> ctr = {
        static_cast<std::uint32_t>(counter_),
        static_cast<std::uint32_t>(counter_ >> 32),
        static_cast<std::uint32_t>(stream_),
        static_cast<std::uint32_t>(stream_ >> 32),
    };
    std::array<std::uint32_t, 2> key = {
        static_cast<std::uint32_t>(key_),
        static_cast<std::uint32_t>(key_ >> 32),
    };
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = 0xD2511F53ULL * ctr[0];
      std::uint64_t p1 = 0xCD9E8D57ULL * ctr[2];
      std::array<std::uint32_t, 4> nxt = {
          static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
          static_cast<std::uint32_t>(p1),
          static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
          static_cast<std::uint32_t>(p0),
      };
      ctr = nxt;
      key[0] += 0x9E3779B9u;
      key[1] += 0xBB67AE85u;
    }
    block_ = ctr;
    pos_ = 0;
    ++counter_;
  }

  std::uint64_t key_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int pos_ = 4;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Named substream of a root seed.  Independent consumers (subsampling,
// noise, quantization, data synthesis) each get their own stream so that
// adding draws in one place never shifts another.
inline RngStream substream(std::uint64_t root_seed, std::string_view name,
                           std::uint64_t index = 0) {
  std::uint64_t id = splitmix64(fnv1a64(name) ^ splitmix64(index));
  return RngStream(splitmix64(root_seed), id);
}

}  // namespace dpopt
