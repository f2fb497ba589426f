#pragma once

#include <cstdint>
#include <string>

#include "covidnet/data/dataset.hpp"
#include "covidnet/data/manifest.hpp"

namespace covidnet::data {

/// Noisy textured background with a class-dependent planted pattern:
/// normal has none, pneumonia has a few bright round blobs, covid19 has a
/// patch of horizontal stripes. Pattern positions vary per image, so the
/// classes survive flips and small shifts.
Tensor synthetic_image(int label, std::size_t size, std::uint64_t seed);

/// `per_class` images of each class, one patient per image, with patient
/// ids prefixed by `prefix`. Labels cycle 0, 1, 2.
ImageSet make_synthetic_set(std::size_t per_class, std::size_t size, std::uint64_t seed,
                            const std::string& prefix = "p");

/// Writes the images of make_synthetic_set as PGM files under `dir` and
/// returns the matching manifest with paths relative to `dir`.
Manifest write_synthetic_fixture(const std::string& dir, std::size_t per_class, std::size_t size,
                                 std::uint64_t seed, const std::string& source);

}  // namespace covidnet::data
