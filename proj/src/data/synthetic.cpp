#include "covidnet/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "covidnet/data/image.hpp"

namespace covidnet::data {

Tensor synthetic_image(int label, std::size_t size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.04);
  const double n = static_cast<double>(size);
  const double phase = 6.283185307179586 * unit(rng);
  const double tilt = 0.1 * (unit(rng) - 0.5);

  std::vector<double> v(size * size);
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double y = static_cast<double>(i) / n, x = static_cast<double>(j) / n;
      v[i * size + j] = 0.3 + tilt * (y - 0.5) + 0.05 * std::sin(6.0 * x + phase) + noise(rng);
    }
  }

  if (label == 1) {
    const int blobs = 3 + static_cast<int>(unit(rng) * 3.0);
    for (int b = 0; b < blobs; ++b) {
      const double cy = n * (0.2 + 0.6 * unit(rng)), cx = n * (0.2 + 0.6 * unit(rng));
      const double r = n * (0.05 + 0.04 * unit(rng));
      for (std::size_t i = 0; i < size; ++i) {
        for (std::size_t j = 0; j < size; ++j) {
          const double dy = static_cast<double>(i) - cy, dx = static_cast<double>(j) - cx;
          v[i * size + j] += 0.35 * std::exp(-(dy * dy + dx * dx) / (2.0 * r * r));
        }
      }
    }
  } else if (label == 2) {
    const double side = n * (0.4 + 0.2 * unit(rng));
    const double top = (n - side) * unit(rng), left = (n - side) * unit(rng);
    const double period = std::max(3.0, n / 10.0);
    const double offset = period * unit(rng);
    for (std::size_t i = 0; i < size; ++i) {
      for (std::size_t j = 0; j < size; ++j) {
        const double y = static_cast<double>(i), x = static_cast<double>(j);
        if (y < top || y >= top + side || x < left || x >= left + side) continue;
        v[i * size + j] += 0.2 * std::sin(6.283185307179586 * (y + offset) / period);
      }
    }
  }
  for (double& e : v) e = std::clamp(e, 0.0, 1.0);
  return Tensor({size, size}, std::move(v));
}

ImageSet make_synthetic_set(std::size_t per_class, std::size_t size, std::uint64_t seed,
                            const std::string& prefix) {
  ImageSet set;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::mt19937_64 rng(seq);
  for (std::size_t k = 0; k < 3 * per_class; ++k) {
    const int label = static_cast<int>(k % 3);
    set.add(synthetic_image(label, size, rng()), label, prefix + std::to_string(k));
  }
  return set;
}

Manifest write_synthetic_fixture(const std::string& dir, std::size_t per_class, std::size_t size,
                                 std::uint64_t seed, const std::string& source) {
  std::filesystem::create_directories(dir);
  const ImageSet set = make_synthetic_set(per_class, size, seed, source + "-");
  Manifest m;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const std::string name = source + "_" + std::to_string(i) + ".pgm";
    write_pgm((std::filesystem::path(dir) / name).string(), set.images[i]);
    m.add(SampleRecord{set.patients[i], name, static_cast<Label>(set.labels[i]), source});
  }
  return m;
}

}  // namespace covidnet::data
