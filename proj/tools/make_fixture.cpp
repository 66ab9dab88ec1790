#include <CLI11.hpp>

#include <iostream>

#include "grounder/errors.hpp"
#include "grounder/fixture.hpp"

// Writes the synthetic planted-blob fixture: features, color labels, train
// and test manifests, embeddings and lexicons.
int main(int argc, char** argv) {
  CLI::App app{"Write the synthetic planted-blob fixture", "grounder-fixture"};
  std::string out;
  grounder::FixtureConfig cfg;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--seed", cfg.seed, "Generator seed");
  app.add_option("--images", cfg.images, "Number of images")->check(CLI::PositiveNumber);
  app.add_option("--noise", cfg.semantic_noise, "Semantic channel noise")
      ->check(CLI::NonNegativeNumber);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }
  try {
    const auto paths = grounder::write_fixture(out, cfg);
    std::cout << paths.root.string() << '\n';
  } catch (const grounder::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
