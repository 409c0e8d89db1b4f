// Generates a marker dictionary with a given minimum rotation-aware Hamming
// distance and writes it in the arucodict text format.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "qsts/dictionary.hpp"
#include "qsts/error.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate a marker dictionary"};
  int n = 4;
  int count = 50;
  int tau = 4;
  std::uint64_t seed = 1;
  std::size_t budget = 2'000'000;
  std::string out;
  app.add_option("--bits", n, "payload bits per side")->check(CLI::Range(2, 8));
  app.add_option("--count", count, "number of codes")->check(CLI::PositiveNumber);
  app.add_option("--tau", tau, "minimum distance")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "generator seed");
  app.add_option("--budget", budget, "candidate draws before giving up");
  app.add_option("--out", out, "output file (stdout if omitted)");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto dict = qsts::generate_dictionary(n, count, tau, seed, budget);
    if (out.empty()) {
      qsts::write_dictionary(dict, std::cout);
    } else {
      qsts::save_dictionary(dict, out);
    }
    std::cerr << "n=" << dict.n() << " count=" << dict.size() << " tau=" << dict.tau()
              << " seed=" << dict.seed() << '\n';
  } catch (const qsts::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
