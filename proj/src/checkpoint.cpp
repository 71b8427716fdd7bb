#include "dse/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dse/errors.hpp"

namespace dse {

namespace {

constexpr char kMagic[8] = {'D', 'S', 'E', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put_raw(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T raw(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw ParseError(std::string("truncated checkpoint while reading ") + what, pos_);
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

Eigen::MatrixXd round_to_float(const Eigen::MatrixXd& m) { return m.cast<float>().cast<double>(); }

void Checkpoint::put(const std::string& name, const Eigen::MatrixXd& m) {
  Tensor t;
  t.shape = {m.rows(), m.cols()};
  t.data.resize(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.data[k++] = static_cast<float>(m(i, j));
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& p) { return p.first == name; });
  if (it != tensors.end()) {
    it->second = std::move(t);
  } else {
    tensors.emplace_back(name, std::move(t));
  }
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const auto& p) { return p.first == name; });
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& p) { return p.first == name; });
  if (it == tensors.end()) throw ShapeError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

Eigen::MatrixXd Checkpoint::matrix(const std::string& name) const {
  const Tensor& t = tensor(name);
  if (t.shape.size() != 2) throw ShapeError("tensor '" + name + "' is not two-dimensional");
  Eigen::MatrixXd m(t.shape[0], t.shape[1]);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<double>(t.data[k++]);
  return m;
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  return a.metadata == b.metadata && a.tensors == b.tensors;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  put_raw<std::uint32_t>(out, kVersion);
  const std::string meta = ckpt.metadata.dump();
  put_raw<std::uint64_t>(out, meta.size());
  out += meta;
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::int64_t d : t.shape) put_raw<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader in(bytes);
  const std::string_view magic = in.take(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0) throw ParseError("not a checkpoint (bad magic)", 0);
  const std::size_t version_pos = in.pos();
  if (in.raw<std::uint32_t>("version") != kVersion) throw ParseError("unsupported checkpoint version", version_pos);

  Checkpoint ckpt;
  const auto meta_len = in.raw<std::uint64_t>("metadata length");
  const std::size_t meta_pos = in.pos();
  const std::string_view meta = in.take(static_cast<std::size_t>(meta_len), "metadata");
  try {
    ckpt.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("malformed checkpoint metadata: ") + e.what(), meta_pos + e.byte);
  }

  const auto count = in.raw<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.raw<std::uint32_t>("tensor name length");
    std::string name(in.take(name_len, "tensor name"));
    const std::size_t shape_pos = in.pos();
    const auto ndim = in.raw<std::uint32_t>("tensor rank");
    if (ndim > 8) throw ParseError("implausible tensor rank", shape_pos);
    Tensor t;
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const auto dim = in.raw<std::uint64_t>("tensor dimension");
      if (dim > (1ULL << 32)) throw ParseError("implausible tensor dimension", in.pos() - 8);
      t.shape.push_back(static_cast<std::int64_t>(dim));
      total *= dim;
    }
    const std::string_view data = in.take(static_cast<std::size_t>(total) * sizeof(float), "tensor data");
    t.data.resize(static_cast<std::size_t>(total));
    std::memcpy(t.data.data(), data.data(), data.size());
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!in.done()) throw ParseError("trailing bytes after checkpoint", in.pos());
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

}  // namespace dse
