#include "qsts/dictionary.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "qsts/error.hpp"

namespace qsts {

namespace {

std::uint64_t payload_mask(int n) {
  const int cells = n * n;
  return cells >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << cells) - 1);
}

Error format_error(const std::string& what) { return Error(ErrorKind::kFormat, what); }

}  // namespace

MarkerCode::MarkerCode(int n, std::uint64_t bits) : n_(n), bits_(bits) {
  if (n < 1 || n > kMaxBits) {
    throw Error(ErrorKind::kParameter, "marker code size must be in [1, 8]");
  }
  if ((bits & ~payload_mask(n)) != 0) {
    throw Error(ErrorKind::kParameter, "marker code has bits outside the payload");
  }
}

MarkerCode MarkerCode::from_string(int n, std::string_view cells) {
  if (n < 1 || n > kMaxBits || cells.size() != static_cast<std::size_t>(n * n)) {
    throw format_error("marker code row must have n*n cells");
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] == '1') {
      bits |= std::uint64_t{1} << i;
    } else if (cells[i] != '0') {
      throw format_error("marker code cells must be 0 or 1");
    }
  }
  return MarkerCode(n, bits);
}

void MarkerCode::set(int row, int col, bool black) {
  const std::uint64_t bit = std::uint64_t{1} << (row * n_ + col);
  bits_ = black ? (bits_ | bit) : (bits_ & ~bit);
}

std::string MarkerCode::to_string() const {
  std::string s(static_cast<std::size_t>(n_ * n_), '0');
  for (int i = 0; i < n_ * n_; ++i) {
    if ((bits_ >> i) & 1U) s[static_cast<std::size_t>(i)] = '1';
  }
  return s;
}

int hamming(const MarkerCode& a, const MarkerCode& b) {
  if (a.n() != b.n()) {
    throw Error(ErrorKind::kParameter, "hamming: code sizes differ");
  }
  return std::popcount(a.bits() ^ b.bits());
}

MarkerCode rotate(const MarkerCode& code, int quarter_turns) {
  const int turns = ((quarter_turns % 4) + 4) % 4;
  const int n = code.n();
  MarkerCode cur = code;
  for (int t = 0; t < turns; ++t) {
    MarkerCode next(n);
    // Clockwise: the cell at (row, col) moves to (col, n - 1 - row).
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        if (cur.get(r, c)) next.set(c, n - 1 - r, true);
      }
    }
    cur = next;
  }
  return cur;
}

int minimum_distance(const std::vector<MarkerCode>& codes) {
  int best = std::numeric_limits<int>::max();
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (int r = 1; r < 4; ++r) {
      best = std::min(best, hamming(codes[i], rotate(codes[i], r)));
    }
    for (std::size_t j = i + 1; j < codes.size(); ++j) {
      for (int r = 0; r < 4; ++r) {
        best = std::min(best, hamming(codes[i], rotate(codes[j], r)));
      }
    }
  }
  return best;
}

MarkerDictionary::MarkerDictionary(int n, std::vector<MarkerCode> codes, std::uint64_t seed)
    : n_(n), codes_(std::move(codes)), seed_(seed) {
  if (codes_.empty()) throw format_error("dictionary has no codes");
  for (const MarkerCode& c : codes_) {
    if (c.n() != n_) throw format_error("dictionary mixes code sizes");
  }
  std::unordered_set<std::uint64_t> seen;
  for (const MarkerCode& c : codes_) {
    if (!seen.insert(c.bits()).second) throw format_error("duplicate code " + c.to_string());
  }
  tau_ = minimum_distance(codes_);
  if (tau_ < 1) {
    throw format_error("dictionary codes are ambiguous under rotation (tau = 0)");
  }
  rotated_.reserve(codes_.size() * 4);
  for (const MarkerCode& c : codes_) {
    for (int r = 0; r < 4; ++r) rotated_.push_back(rotate(c, r));
  }
}

std::optional<MarkerMatch> match(const MarkerCode& observed, const MarkerDictionary& dict,
                                 int max_corrections) {
  if (max_corrections < 0 || max_corrections > dict.max_correctable()) {
    throw Error(ErrorKind::kParameter,
                "correction budget exceeds floor((tau - 1) / 2) = " +
                    std::to_string(dict.max_correctable()));
  }
  if (observed.n() != dict.n()) {
    throw Error(ErrorKind::kParameter, "observed code size differs from dictionary");
  }
  MarkerMatch best{0, 0, std::numeric_limits<int>::max()};
  for (std::size_t id = 0; id < dict.size(); ++id) {
    for (int r = 0; r < 4; ++r) {
      const int d = std::popcount(observed.bits() ^ dict.rotated(id, r).bits());
      if (d < best.distance) best = {static_cast<int>(id), r, d};
    }
  }
  if (best.distance > max_corrections) return std::nullopt;
  return best;
}

MarkerDictionary generate_dictionary(int n, int count, int tau_target, std::uint64_t seed,
                                     std::size_t attempt_budget) {
  if (count < 1 || tau_target < 1) {
    throw Error(ErrorKind::kParameter, "generate_dictionary: count and tau must be >= 1");
  }
  const std::uint64_t mask = payload_mask(n);
  std::mt19937_64 rng(seed);
  std::vector<MarkerCode> accepted;
  std::vector<MarkerCode> accepted_rotations;
  for (std::size_t attempt = 0; attempt < attempt_budget; ++attempt) {
    const MarkerCode candidate(n, rng() & mask);
    bool ok = true;
    for (int r = 1; r < 4 && ok; ++r) {
      ok = hamming(candidate, rotate(candidate, r)) >= tau_target;
    }
    for (std::size_t k = 0; k < accepted_rotations.size() && ok; ++k) {
      ok = std::popcount(candidate.bits() ^ accepted_rotations[k].bits()) >= tau_target;
    }
    if (!ok) continue;
    accepted.push_back(candidate);
    for (int r = 0; r < 4; ++r) accepted_rotations.push_back(rotate(candidate, r));
    if (accepted.size() == static_cast<std::size_t>(count)) {
      return MarkerDictionary(n, std::move(accepted), seed);
    }
  }
  throw Error(ErrorKind::kGeneration,
              "could not place " + std::to_string(count) + " codes at tau " +
                  std::to_string(tau_target) + " within the attempt budget");
}

MarkerDictionary parse_dictionary(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "arucodict v1") {
    throw format_error("missing 'arucodict v1' header");
  }
  if (!std::getline(in, line)) throw format_error("missing dictionary parameter line");

  int n = -1;
  long long count = -1;
  int declared_tau = -1;
  std::uint64_t seed = 0;
  bool have_seed = false;
  {
    std::istringstream fields(line);
    std::string field;
    while (fields >> field) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) throw format_error("bad header field '" + field + "'");
      const std::string key = field.substr(0, eq);
      const std::string value = field.substr(eq + 1);
      try {
        if (key == "n") {
          n = std::stoi(value);
        } else if (key == "count") {
          count = std::stoll(value);
        } else if (key == "tau") {
          declared_tau = std::stoi(value);
        } else if (key == "seed") {
          seed = std::stoull(value);
          have_seed = true;
        } else {
          throw format_error("unknown header field '" + key + "'");
        }
      } catch (const std::logic_error&) {
        throw format_error("bad header value '" + field + "'");
      }
    }
  }
  if (n < 1 || n > MarkerCode::kMaxBits || count < 1 || declared_tau < 1 || !have_seed) {
    throw format_error("header must declare n, count, tau and seed");
  }

  std::vector<MarkerCode> codes;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    long long id = -1;
    std::string cells;
    std::string extra;
    if (!(row >> id >> cells) || (row >> extra)) {
      throw format_error("bad code row '" + line + "'");
    }
    if (id != static_cast<long long>(codes.size())) {
      throw format_error("code ids must be consecutive from 0");
    }
    codes.push_back(MarkerCode::from_string(n, cells));
  }
  if (static_cast<long long>(codes.size()) != count) {
    throw format_error("declared count does not match the code rows");
  }
  MarkerDictionary dict(n, std::move(codes), seed);
  if (declared_tau > dict.tau()) {
    throw format_error("declared tau " + std::to_string(declared_tau) +
                       " exceeds the actual minimum distance " +
                       std::to_string(dict.tau()));
  }
  return dict;
}

void write_dictionary(const MarkerDictionary& dict, std::ostream& out) {
  out << "arucodict v1\n";
  out << "n=" << dict.n() << " count=" << dict.size() << " tau=" << dict.tau()
      << " seed=" << dict.seed() << '\n';
  for (std::size_t id = 0; id < dict.size(); ++id) {
    out << id << ' ' << dict.code(id).to_string() << '\n';
  }
}

MarkerDictionary load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  try {
    return parse_dictionary(in);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void save_dictionary(const MarkerDictionary& dict, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  write_dictionary(dict, out);
  if (!out) throw Error(ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace qsts
