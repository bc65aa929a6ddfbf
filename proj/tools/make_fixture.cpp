// Regenerates the desk-scale benchmark fixture (data/fixture).

#include <iostream>

#include <CLI11.hpp>

#include "cforge/fixture.hpp"
#include "cforge/log.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic violence-concept fixture"};
  std::string out = "data/fixture";
  app.add_option("--out", out, "Output directory");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto fx = cforge::fixture::build();
    cforge::fixture::write(fx, out);
    std::cout << "vocabulary " << fx.vocab.size() << ", accept_threshold " << fx.oracle.accept_threshold
              << ", checker_threshold " << fx.oracle.checker_threshold << " -> " << out << "\n";
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 3;
  }
  return 0;
}
