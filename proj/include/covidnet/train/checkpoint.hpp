#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "covidnet/tensor/tensor.hpp"

namespace covidnet::train {

/// Binary checkpoint layout, all integers little-endian:
///
///   magic      8 bytes  "CVNTCKPT"
///   version    u32      kCheckpointVersion
///   n_meta     u32
///   n_meta x { u32 key length, key bytes, u32 value length, value bytes }
///   n_tensor   u32
///   n_tensor x { u32 name length, name bytes, u32 rank, rank x u64 extent,
///                numel x f64 (IEEE-754 binary64) }
///   trailer    8 bytes  "CVNTEND\0"
///
/// Metadata holds text (configurations, counters written with shortest
/// round-trip formatting). Nothing after the trailer is allowed.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::map<std::string, Tensor> tensors;

  const std::string& meta(const std::string& key) const;
  const Tensor& tensor(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Throws std::runtime_error on a bad magic, unsupported version,
/// truncation or trailing bytes.
Checkpoint decode_checkpoint(const std::string& bytes);

/// Writes to a temporary sibling and renames, so a reader never sees a
/// partially written file.
void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace covidnet::train
