#include "covidnet/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace covidnet::train {

namespace {

constexpr char kMagic[8] = {'C', 'V', 'N', 'T', 'C', 'K', 'P', 'T'};
constexpr char kTrailer[8] = {'C', 'V', 'N', 'T', 'E', 'N', 'D', '\0'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void expect(const char (&tag)[8], const char* what) {
    need(8, what);
    if (std::memcmp(bytes_.data() + pos_, tag, 8) != 0) {
      throw std::runtime_error(std::string("checkpoint: bad ") + what);
    }
    pos_ += 8;
  }

  std::uint64_t u(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string str(const char* what) {
    const std::size_t n = u(4, what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
    }
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const std::string& Checkpoint::meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw std::runtime_error("checkpoint: missing metadata '" + key + "'");
  return it->second;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  const auto it = tensors.find(name);
  if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, 8);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(c.metadata.size()));
  for (const auto& [k, v] : c.metadata) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, t] : c.tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_u64(out, d);
    for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  out.append(kTrailer, 8);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  r.expect(kMagic, "magic (not a checkpoint file)");
  const auto version = r.u(4, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const auto n_meta = r.u(4, "metadata count");
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string key = r.str("metadata key");
    c.metadata[key] = r.str("metadata value");
  }
  const auto n_tensor = r.u(4, "tensor count");
  for (std::uint64_t i = 0; i < n_tensor; ++i) {
    std::string name = r.str("tensor name");
    const auto rank = r.u(4, "tensor rank");
    if (rank > 8) throw std::runtime_error("checkpoint: tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.u(8, "tensor extent");
      if (d == 0 || d > (std::size_t{1} << 40)) {
        throw std::runtime_error("checkpoint: tensor '" + name + "' has an invalid extent");
      }
      numel *= d;
    }
    r.need(numel * 8, "tensor values");
    std::vector<double> values(numel);
    for (double& v : values) v = std::bit_cast<double>(r.u(8, "tensor values"));
    c.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  r.expect(kTrailer, "trailer (file truncated or corrupt)");
  if (!r.done()) throw std::runtime_error("checkpoint: unexpected bytes after trailer");
  return c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
  const std::string bytes = encode_checkpoint(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open checkpoint for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error(path + ": checkpoint write failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(path + ": cannot open checkpoint");
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  try {
    return decode_checkpoint(bytes);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace covidnet::train
