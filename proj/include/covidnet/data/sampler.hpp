#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace covidnet::data {

/// Batch size rounded down to a multiple of the class count (64 -> 63).
/// Throws std::invalid_argument when fewer than 3.
std::size_t balanced_batch_size(std::size_t requested);

/// Class-rebalanced batches for one epoch, as indices into `labels`
/// (values 0..2).
///
/// With quota q = balanced_batch_size(batch_size) / 3 and the largest class
/// of size M, an epoch has floor(M / q) batches (at least one), so each
/// class contributes need = batches * q samples. A class with at least
/// `need` samples contributes a prefix of a random permutation, so each of
/// its samples appears at most once. A smaller class is oversampled by
/// independent uniform draws with replacement. Each batch holds exactly q
/// samples of every class, in shuffled order. The result depends only on
/// (labels, batch_size, seed, epoch).
std::vector<std::vector<std::size_t>> rebalanced_batches(std::span<const int> labels,
                                                         std::size_t batch_size, std::uint64_t seed,
                                                         std::uint64_t epoch = 0);

}  // namespace covidnet::data
