#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covidnet/data/manifest.hpp"
#include "covidnet/tensor/tensor.hpp"

namespace covidnet::data {

/// Decoded images with their class indices and patient keys.
struct ImageSet {
  std::vector<Tensor> images;  // each [H, W] in [0, 1]
  std::vector<int> labels;
  std::vector<std::string> patients;

  std::size_t size() const { return images.size(); }
  void add(Tensor image, int label, std::string patient);
  ImageSet subset(const std::vector<std::size_t>& indices) const;
  double mean_intensity() const;
};

/// Resolves each record's image path against `base_dir` (unless absolute),
/// preprocesses it to size x size and keys patients through `aliases`.
ImageSet load_image_set(const Manifest& manifest, const std::string& base_dir, std::size_t size,
                        const PatientAliases& aliases = {});

struct ImageSetSplit {
  ImageSet train;
  ImageSet held_out;
};

/// Patient-level split of an image set with the same rules as patient_split.
ImageSetSplit split_by_patient(const ImageSet& set, double fraction, std::uint64_t seed);

/// Stacks images [H, W] selected by `indices` into a [N, 1, H, W] batch.
Tensor stack_batch(const std::vector<Tensor>& images, const std::vector<std::size_t>& indices);

}  // namespace covidnet::data
