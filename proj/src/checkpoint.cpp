#include "scm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>
#include <set>

#include <zlib.h>

#include "scm/data.hpp"
#include "scm/errors.hpp"

namespace scm {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'C', 'M', '1'};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_string(std::string& out, std::string_view s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, bytes_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string string() { return std::string(take(u32())); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ChecksumError("checkpoint ends mid-record");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const RunConfig& config, Model& model) {
  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_string(out, serialize(config));
  put_string(out, model.vocab().serialize());
  const std::vector<Parameter*> params = model.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_string(out, p->name);
    put_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t e : p->value.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : p->value.data()) {
      const float f = static_cast<float>(v);
      char b[4];
      std::memcpy(b, &f, 4);
      out.append(b, 4);
    }
  }
  put_u32(out, crc_of(out));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ChecksumError("not a checkpoint (missing SCM1 header)");
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kCheckpointVersion)
    throw MigrationError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointVersion) + "); re-export it with a matching build");
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  if (crc_of(body) != stored) throw ChecksumError("checkpoint checksum mismatch (file truncated or corrupted)");

  Reader r(body.substr(8));
  Checkpoint ck;
  try {
    ck.config = parse_config(r.string());
    ck.vocab = Vocabulary::parse(r.string());
  } catch (const ConfigError& e) {
    throw ChecksumError(std::string("checkpoint config unreadable: ") + e.what());
  } catch (const DataError& e) {
    throw ChecksumError(std::string("checkpoint vocabulary unreadable: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.string();
    Shape shape(r.u32());
    std::size_t n = 1;
    for (std::size_t& e : shape) {
      e = r.u32();
      n *= e;
    }
    std::string_view payload = r.take(n * 4);
    std::vector<double> data(n);
    for (std::size_t j = 0; j < n; ++j) {
      float f;
      std::memcpy(&f, payload.data() + 4 * j, 4);
      data[j] = f;
    }
    t.value = Tensor(std::move(shape), std::move(data));
    ck.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw ChecksumError("trailing bytes after the last tensor");
  return ck;
}

void save_checkpoint(const std::string& path, const RunConfig& config, Model& model) {
  write_file(path, encode_checkpoint(config, model));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

void apply_tensors(Model& model, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const NamedTensor& t : tensors)
    if (!by_name.emplace(t.name, &t).second) throw InventoryError("checkpoint holds tensor '" + t.name + "' twice");
  std::set<std::string> used;
  const std::vector<Parameter*> params = model.parameters();
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw InventoryError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second->value.shape() != p->value.shape())
      throw InventoryError("parameter '" + p->name + "' has shape " + shape_string(it->second->value.shape()) +
                           " in the checkpoint, model expects " + shape_string(p->value.shape()));
    used.insert(p->name);
  }
  for (const NamedTensor& t : tensors)
    if (!used.count(t.name)) throw InventoryError("checkpoint tensor '" + t.name + "' has no matching parameter");
  for (Parameter* p : params) p->value = by_name.at(p->name)->value;
}

Model restore_model(const Checkpoint& ckpt) {
  Model model(ckpt.config.model, ckpt.vocab, ckpt.config.train.seed);
  apply_tensors(model, ckpt.tensors);
  return model;
}

void quantize_parameters(Model& model) {
  for (Parameter* p : model.parameters())
    for (double& v : p->value.data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace scm
