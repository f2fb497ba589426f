// Writes a synthetic three-class image set and its manifest, for trying the
// pipeline without real radiographs.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "covidnet/data/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic image set with a manifest.csv", "covidnet-synth"};
  std::string out;
  std::size_t per_class = 100;
  std::size_t size = 64;
  std::uint64_t seed = 0;
  std::string source = "synthetic";
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--per-class", per_class, "images per class");
  app.add_option("--size", size, "image side in pixels");
  app.add_option("--seed", seed);
  app.add_option("--source", source, "source name written to the manifest");
  CLI11_PARSE(app, argc, argv);
  try {
    const auto manifest = covidnet::data::write_synthetic_fixture(out, per_class, size, seed, source);
    const auto path = (std::filesystem::path(out) / "manifest.csv").string();
    manifest.save(path);
    std::cout << manifest.size() << " images, manifest " << path << '\n';
  } catch (const std::exception& e) {
    std::cerr << "covidnet-synth: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
