#include "diffseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "diffseg/csv.hpp"
#include "diffseg/errors.hpp"

namespace diffseg {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'I', 'F', 'F', 'S', 'E', 'G', '\0'};

class Writer {
 public:
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <class T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* p, std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint truncated");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const ModelConfig& c) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.variant));
  w.put<std::int32_t>(c.base_channels);
  w.put<std::int32_t>(c.depth);
  w.put<std::int32_t>(c.time_embed_dim);
  w.put<std::int32_t>(c.image_channels);
  w.put<std::int32_t>(c.mask_channels);
  w.put<std::int32_t>(c.image_size);
  w.put<std::int32_t>(c.steps);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.prediction));
}

ModelConfig read_config(Reader& r) {
  char magic[8];
  r.get_bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw FormatError("not a diffseg checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig c;
  const auto variant = r.get<std::uint32_t>();
  if (variant > static_cast<std::uint32_t>(Variant::ff_parser)) throw FormatError("checkpoint has unknown variant");
  c.variant = static_cast<Variant>(variant);
  c.base_channels = r.get<std::int32_t>();
  c.depth = r.get<std::int32_t>();
  c.time_embed_dim = r.get<std::int32_t>();
  c.image_channels = r.get<std::int32_t>();
  c.mask_channels = r.get<std::int32_t>();
  c.image_size = r.get<std::int32_t>();
  c.steps = r.get<std::int32_t>();
  const auto pred = r.get<std::uint32_t>();
  if (pred > static_cast<std::uint32_t>(Prediction::logits)) throw FormatError("checkpoint has unknown prediction kind");
  c.prediction = static_cast<Prediction>(pred);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  return c;
}

}  // namespace

void save_checkpoint(const DenoiserModel& model, const std::filesystem::path& path) {
  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  write_config(w, model.config());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& np : model.parameters()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(np.name.size()));
    w.put_bytes(np.name.data(), np.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(np.tensor.rank()));
    for (auto e : np.tensor.shape()) w.put<std::uint64_t>(e);
    w.put_bytes(np.tensor.data().data(), np.tensor.numel() * sizeof(double));
  }
  write_file_atomic(path, w.str());
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  Reader r(read_file(path));
  return read_config(r);
}

DenoiserModel load_checkpoint(const std::filesystem::path& path, std::optional<Variant> expected_variant) {
  Reader r(read_file(path));
  const auto config = read_config(r);
  if (expected_variant && *expected_variant != config.variant) {
    throw FormatError(std::string("checkpoint holds a ") + to_string(config.variant) + " model, expected " +
                      to_string(*expected_variant));
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<NamedParameter> params;
  params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    if (name_len > 4096) throw FormatError("checkpoint parameter name too long");
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint parameter rank too large");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& e : shape) {
      e = static_cast<std::size_t>(r.get<std::uint64_t>());
      if (e == 0 || e > (1u << 24)) throw FormatError("checkpoint parameter extent out of range");
      total *= e;
    }
    if (total > (1u << 26)) throw FormatError("checkpoint parameter too large");
    std::vector<double> values(static_cast<std::size_t>(total));
    r.get_bytes(values.data(), values.size() * sizeof(double));
    params.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values), true)});
  }
  if (!r.at_end()) throw FormatError("checkpoint has trailing bytes");

  auto model = DenoiserModel::build(config, 0);
  try {
    model.assign_parameters(params);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint parameters do not fit config: ") + e.what());
  }
  return model;
}

}  // namespace diffseg
