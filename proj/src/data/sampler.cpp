#include "covidnet/data/sampler.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <stdexcept>
#include <string>

namespace covidnet::data {

std::size_t balanced_batch_size(std::size_t requested) {
  if (requested < 3) {
    throw std::invalid_argument("batch size " + std::to_string(requested) +
                                " is too small for one sample of each class");
  }
  return requested - requested % 3;
}

std::vector<std::vector<std::size_t>> rebalanced_batches(std::span<const int> labels,
                                                         std::size_t batch_size, std::uint64_t seed,
                                                         std::uint64_t epoch) {
  const std::size_t quota = balanced_batch_size(batch_size) / 3;
  std::array<std::vector<std::size_t>, 3> members;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 2) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " at index " +
                                  std::to_string(i) + " is not a class index");
    }
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  std::size_t largest = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    if (members[c].empty()) {
      throw std::invalid_argument("class " + std::to_string(c) + " has no samples to rebalance");
    }
    largest = std::max(largest, members[c].size());
  }
  const std::size_t batches = std::max<std::size_t>(1, largest / quota);
  const std::size_t need = batches * quota;

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::array<std::vector<std::size_t>, 3> streams;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<std::size_t>& pool = members[c];
    if (pool.size() >= need) {
      std::shuffle(pool.begin(), pool.end(), rng);
      streams[c].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(need));
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      streams[c].resize(need);
      for (std::size_t& s : streams[c]) s = pool[pick(rng)];
    }
  }

  std::vector<std::vector<std::size_t>> out(batches);
  for (std::size_t b = 0; b < batches; ++b) {
    out[b].reserve(3 * quota);
    for (std::size_t c = 0; c < 3; ++c) {
      out[b].insert(out[b].end(), streams[c].begin() + static_cast<std::ptrdiff_t>(b * quota),
                    streams[c].begin() + static_cast<std::ptrdiff_t>((b + 1) * quota));
    }
    std::shuffle(out[b].begin(), out[b].end(), rng);
  }
  return out;
}

}  // namespace covidnet::data
