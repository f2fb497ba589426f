#include "covidnet/data/dataset.hpp"

#include <filesystem>
#include <stdexcept>

#include "covidnet/data/image.hpp"

namespace covidnet::data {

void ImageSet::add(Tensor image, int label, std::string patient) {
  if (image.rank() != 2) throw std::invalid_argument("image set entries must be [H, W]");
  if (!images.empty() && image.shape() != images.front().shape()) {
    throw std::invalid_argument("image " + shape_str(image.shape()) + " does not match the set's " +
                                shape_str(images.front().shape()));
  }
  if (label < 0 || label > 2) throw std::invalid_argument("label out of range");
  images.push_back(std::move(image));
  labels.push_back(label);
  patients.push_back(std::move(patient));
}

ImageSet ImageSet::subset(const std::vector<std::size_t>& indices) const {
  ImageSet out;
  for (std::size_t i : indices) out.add(images.at(i), labels.at(i), patients.at(i));
  return out;
}

double ImageSet::mean_intensity() const {
  if (images.empty()) throw std::invalid_argument("mean intensity of an empty image set");
  double sum = 0.0;
  std::size_t count = 0;
  for (const Tensor& t : images) {
    for (double v : t.values()) sum += v;
    count += t.numel();
  }
  return sum / static_cast<double>(count);
}

ImageSet load_image_set(const Manifest& manifest, const std::string& base_dir, std::size_t size,
                        const PatientAliases& aliases) {
  ImageSet set;
  for (const SampleRecord& r : manifest.records()) {
    std::filesystem::path p(r.image_path);
    if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
    set.add(preprocess(p.string(), size), label_index(r.label), aliases.key(r));
  }
  return set;
}

ImageSetSplit split_by_patient(const ImageSet& set, double fraction, std::uint64_t seed) {
  Manifest m;
  for (std::size_t i = 0; i < set.size(); ++i) {
    m.add(SampleRecord{set.patients[i], std::to_string(i), static_cast<Label>(set.labels[i]), "set"});
  }
  PatientAliases identity;
  for (const SampleRecord& r : m.records()) identity.add(r.source, r.patient_id, r.patient_id);
  const Split split = patient_split(m, fraction, seed, identity);
  auto indices = [](const Manifest& side) {
    std::vector<std::size_t> idx;
    for (const SampleRecord& r : side.records()) idx.push_back(std::stoul(r.image_path));
    return idx;
  };
  return ImageSetSplit{set.subset(indices(split.train)), set.subset(indices(split.test))};
}

Tensor stack_batch(const std::vector<Tensor>& images, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("empty batch");
  const Shape& s = images.at(indices[0]).shape();
  std::vector<double> values;
  values.reserve(indices.size() * s[0] * s[1]);
  for (std::size_t i : indices) {
    const Tensor& img = images.at(i);
    if (img.shape() != s) throw std::invalid_argument("batch images differ in shape");
    values.insert(values.end(), img.values().begin(), img.values().end());
  }
  return Tensor({indices.size(), 1, s[0], s[1]}, std::move(values));
}

}  // namespace covidnet::data
