#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "krutrim/model.hpp"

namespace krutrim {

namespace {

constexpr char kMagic[4] = {'K', 'R', 'T', 'M'};
constexpr std::uint32_t kDtypeF32 = 0;

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  std::vector<unsigned char>& buffer() { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& buf, std::size_t pos) : buf_(buf), pos_(pos) {}
  const unsigned char* take(std::size_t n) {
    if (n > buf_.size() - pos_) throw std::runtime_error("checkpoint: truncated file");
    const unsigned char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t le(int n) {
    const unsigned char* p = take(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<unsigned char>& buf_;
  std::size_t pos_;
};

std::uint64_t fnv1a(const unsigned char* p, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

}  // namespace

void write_tensor_file(const std::string& path, const nlohmann::json& meta,
                       const std::vector<NamedTensor>& tensors) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string blob = meta.dump();
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    std::size_t numel = 1;
    for (auto d : t.dims) numel *= d;
    if (numel != t.data.size()) throw std::invalid_argument("tensor " + t.name + ": shape/data mismatch");
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u32(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u64(d);
  }
  const std::size_t checksum_at = w.buffer().size();
  w.u64(0);
  for (const auto& t : tensors) {
    for (float f : t.data) w.u32(std::bit_cast<std::uint32_t>(f));
  }
  auto& buf = w.buffer();
  std::uint64_t h = fnv1a(buf.data(), checksum_at, kFnvOffset);
  h = fnv1a(buf.data() + checksum_at + 8, buf.size() - checksum_at - 8, h);
  for (int i = 0; i < 8; ++i) buf[checksum_at + i] = static_cast<unsigned char>(h >> (8 * i));

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::pair<nlohmann::json, std::vector<NamedTensor>> read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                       std::istreambuf_iterator<char>());
  ByteReader r(buf, 0);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t blob_len = r.u32();
  const auto* blob = r.take(blob_len);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob, blob + blob_len);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: corrupt metadata: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  std::vector<NamedTensor> tensors(count);
  for (auto& t : tensors) {
    const std::uint32_t name_len = r.u32();
    const auto* name = r.take(name_len);
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    if (r.u32() != kDtypeF32) throw std::runtime_error("checkpoint: unsupported dtype");
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw std::runtime_error("checkpoint: corrupt tensor table");
    t.dims.resize(ndim);
    for (auto& d : t.dims) d = r.u64();
  }
  const std::size_t checksum_at = r.pos();
  const std::uint64_t stored = r.u64();
  std::uint64_t h = fnv1a(buf.data(), checksum_at, kFnvOffset);
  h = fnv1a(buf.data() + checksum_at + 8, buf.size() - checksum_at - 8, h);
  if (h != stored) throw std::runtime_error("checkpoint: checksum mismatch");
  for (auto& t : tensors) {
    std::size_t numel = 1;
    for (auto d : t.dims) numel *= d;
    t.data.resize(numel);
    for (auto& f : t.data) f = std::bit_cast<float>(r.u32());
  }
  if (r.pos() != buf.size()) throw std::runtime_error("checkpoint: trailing bytes");
  return {std::move(meta), std::move(tensors)};
}

std::vector<NamedTensor> to_named_tensors(const ModelConfig& config, const Weights<float>& w,
                                          const std::string& prefix) {
  const auto layout = parameter_layout(config);
  std::vector<NamedTensor> out;
  w.visit([&](std::size_t i, const std::vector<float>& t) {
    out.push_back({prefix + layout[i].name, layout[i].dims, t});
  });
  return out;
}

Weights<float> from_named_tensors(const ModelConfig& config,
                                  const std::vector<NamedTensor>& tensors,
                                  const std::string& prefix) {
  const auto layout = parameter_layout(config);
  Weights<float> w = Weights<float>::zeros(config);
  w.visit([&](std::size_t i, std::vector<float>& t) {
    const std::string want = prefix + layout[i].name;
    for (const auto& nt : tensors) {
      if (nt.name != want) continue;
      if (nt.dims != layout[i].dims) {
        throw std::runtime_error("checkpoint: tensor " + want + " has shape inconsistent with config");
      }
      t = nt.data;
      return;
    }
    throw std::runtime_error("checkpoint: missing tensor " + want);
  });
  return w;
}

void save_checkpoint(const std::string& path, const Model<float>& model,
                     const nlohmann::json& extra) {
  nlohmann::json meta = {{"format", "krtm"}, {"config", model.config().to_json()}};
  if (!extra.empty()) meta["extra"] = extra;
  write_tensor_file(path, meta, to_named_tensors(model.config(), model.weights()));
}

Model<float> load_checkpoint(const std::string& path, nlohmann::json* extra) {
  auto [meta, tensors] = read_tensor_file(path);
  if (!meta.contains("config")) throw std::runtime_error("checkpoint: no model config");
  const ModelConfig config = ModelConfig::from_json(meta.at("config"));
  std::size_t model_tensors = 0;
  for (const auto& t : tensors) {
    if (!t.name.starts_with("adam.")) ++model_tensors;
  }
  if (model_tensors != parameter_layout(config).size()) {
    throw std::runtime_error("checkpoint: tensor count does not match config");
  }
  if (extra) *extra = meta.value("extra", nlohmann::json::object());
  return Model<float>(config, from_named_tensors(config, tensors));
}

}  // namespace krutrim
