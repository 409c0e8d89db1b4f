#include "qsts/text_io.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>

#include "qsts/error.hpp"

namespace qsts {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kMalformedInput: return "malformed input";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kDegenerate: return "degenerate configuration";
    case ErrorKind::kNumerical: return "numerical error";
    case ErrorKind::kProjection: return "projection error";
    case ErrorKind::kPose: return "pose error";
    case ErrorKind::kCalibration: return "calibration error";
    case ErrorKind::kGeneration: return "generation failure";
    case ErrorKind::kBaseline: return "baseline error";
    case ErrorKind::kUnavailable: return "unavailable";
    case ErrorKind::kIo: return "I/O error";
  }
  return "error";
}

std::string format_fixed(double value, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, value);
  std::string s(buf);
  if (s.size() > 1 && s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) {
    s.erase(0, 1);
  }
  return s;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

double parse_double(std::string_view text, std::string_view what) {
  const std::string s = trim(text);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw Error(ErrorKind::kFormat,
                "bad number '" + s + "' for " + std::string(what));
  }
  return v;
}

long long parse_int(std::string_view text, std::string_view what) {
  const std::string s = trim(text);
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw Error(ErrorKind::kFormat,
                "bad integer '" + s + "' for " + std::string(what));
  }
  return v;
}

}  // namespace qsts
