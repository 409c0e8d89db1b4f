#pragma once

// Square binary marker codebooks: n x n payloads, quarter-turn rotations,
// Hamming matching with bounded correction, seeded generation and a small
// text persistence format.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qsts {

/// n x n payload bits, row-major, true = black cell. Supports n <= 8.
class MarkerCode {
 public:
  static constexpr int kMaxBits = 8;

  MarkerCode() = default;
  explicit MarkerCode(int n, std::uint64_t bits = 0);
  /// Parses n*n characters of '0'/'1'.
  static MarkerCode from_string(int n, std::string_view cells);

  int n() const { return n_; }
  std::uint64_t bits() const { return bits_; }

  bool get(int row, int col) const { return (bits_ >> (row * n_ + col)) & 1U; }
  void set(int row, int col, bool black);

  std::string to_string() const;

  friend bool operator==(const MarkerCode&, const MarkerCode&) = default;

 private:
  int n_ = 0;
  std::uint64_t bits_ = 0;
};

int hamming(const MarkerCode& a, const MarkerCode& b);

/// 90 degree clockwise rotation applied quarter_turns times (any integer).
MarkerCode rotate(const MarkerCode& code, int quarter_turns);

struct MarkerMatch {
  int id = 0;
  int rotation = 0;  // observed == rotate(codes[id], rotation)
  int distance = 0;

  friend bool operator==(const MarkerMatch&, const MarkerMatch&) = default;
};

class MarkerDictionary {
 public:
  /// Validates every invariant and computes tau from the codes.
  /// Throws kFormat on duplicates, mixed sizes or rotational ambiguity.
  MarkerDictionary(int n, std::vector<MarkerCode> codes, std::uint64_t seed = 0);

  int n() const { return n_; }
  int tau() const { return tau_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return codes_.size(); }
  const MarkerCode& code(std::size_t id) const { return codes_.at(id); }
  const std::vector<MarkerCode>& codes() const { return codes_; }
  /// rotate(code(id), r), precomputed.
  const MarkerCode& rotated(std::size_t id, int r) const { return rotated_[4 * id + r]; }

  /// Largest correction budget that keeps decoding unique.
  int max_correctable() const { return (tau_ - 1) / 2; }

  friend bool operator==(const MarkerDictionary&, const MarkerDictionary&) = default;

 private:
  int n_;
  std::vector<MarkerCode> codes_;
  int tau_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<MarkerCode> rotated_;
};

/// Smallest distance between any two codes under any rotation, or between a
/// code and its own non-trivial rotations. This is the dictionary's tau.
int minimum_distance(const std::vector<MarkerCode>& codes);

/// Best (id, rotation) over all codes and rotations if within
/// max_corrections bit flips. Throws kParameter if max_corrections exceeds
/// dict.max_correctable().
std::optional<MarkerMatch> match(const MarkerCode& observed, const MarkerDictionary& dict,
                                 int max_corrections);

/// Rejection sampling of random codes until `count` are accepted with
/// pairwise and self-rotation distance >= tau_target. Deterministic per seed.
/// Throws kGeneration when the attempt budget runs out.
MarkerDictionary generate_dictionary(int n, int count, int tau_target, std::uint64_t seed,
                                     std::size_t attempt_budget = 2'000'000);

MarkerDictionary parse_dictionary(std::istream& in);
void write_dictionary(const MarkerDictionary& dict, std::ostream& out);
MarkerDictionary load_dictionary(const std::filesystem::path& path);
void save_dictionary(const MarkerDictionary& dict, const std::filesystem::path& path);

/// The 4x4, 50-marker dictionary shipped in core/data.
const MarkerDictionary& default_dictionary();

}  // namespace qsts
