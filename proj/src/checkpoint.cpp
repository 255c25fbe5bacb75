#include "mfnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "mfnet/error.hpp"

namespace mfnet {

namespace {

constexpr char kMagic[8] = {'M', 'F', 'N', 'E', 'T', 'C', 'K', 'P'};

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void tensor(const NamedTensor& t) {
    str(t.name);
    u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) u64(static_cast<std::uint64_t>(d));
    for (float v : t.values) u32(std::bit_cast<std::uint32_t>(v));
  }

 private:
  void le(std::uint64_t v, int bytes) {
    char buf[8];
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out_.write(buf, bytes);
  }
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > (1u << 26)) fail("string length " + std::to_string(n));
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  NamedTensor tensor() {
    NamedTensor t;
    t.name = str();
    const std::uint32_t ndim = u32();
    if (ndim > 8) fail("tensor '" + t.name + "' has " + std::to_string(ndim) + " dims");
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
      const std::uint64_t d = u64();
      if (d == 0 || d > (1u << 28) || numel * d > (1u << 28)) fail("tensor '" + t.name + "' has a bad extent");
      numel *= d;
      t.shape.push_back(static_cast<std::int64_t>(d));
    }
    t.values.resize(numel);
    for (auto& v : t.values) v = std::bit_cast<float>(u32());
    return t;
  }
  void read(char* dst, std::uint64_t n) {
    if (!in_.read(dst, static_cast<std::streamsize>(n))) fail("unexpected end of file");
  }
  [[noreturn]] void fail(const std::string& what) { throw InputError(origin_ + ": corrupt checkpoint (" + what + ")"); }

 private:
  std::uint64_t le(int bytes) {
    unsigned char buf[8];
    read(reinterpret_cast<char*>(buf), static_cast<std::uint64_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
  std::string origin_;
};

NamedTensor snapshot(const std::string& name, const Tensor& t) {
  if (t.dtype() != DType::F32) throw UsageError("checkpoints store float32 tensors only; '" + name + "' is " + std::string(dtype_name(t.dtype())));
  const auto data = t.data<float>();
  return {name, t.shape(), std::vector<float>(data.begin(), data.end())};
}

void write_records(Writer& w, const std::vector<NamedTensor>& records) {
  w.u32(static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) w.tensor(r);
}

std::vector<NamedTensor> read_records(Reader& r) {
  const std::uint32_t n = r.u32();
  if (n > (1u << 20)) r.fail("record count " + std::to_string(n));
  std::vector<NamedTensor> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(r.tensor());
  return out;
}

// Pairs each expected (name, tensor) with its record, collecting every problem.
void match(const std::string& kind, const std::vector<std::pair<std::string, Tensor>>& expected,
           const std::vector<NamedTensor>& records, std::vector<std::string>& problems,
           std::vector<std::pair<Tensor, const NamedTensor*>>& pairs) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& r : records)
    if (!by_name.emplace(r.name, &r).second) problems.push_back(kind + " '" + r.name + "' appears twice in checkpoint");
  for (const auto& [name, tensor] : expected) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      problems.push_back("missing " + kind + " '" + name + "' " + shape_str(tensor.shape()));
      continue;
    }
    if (it->second->shape != tensor.shape())
      problems.push_back(kind + " '" + name + "' has shape " + shape_str(it->second->shape) + " in checkpoint, model expects " +
                         shape_str(tensor.shape()));
    else
      pairs.emplace_back(tensor, it->second);
    by_name.erase(it);
  }
  for (const auto& [name, r] : by_name) problems.push_back("unexpected " + kind + " '" + name + "' " + shape_str(r->shape));
}

}  // namespace

Checkpoint capture_checkpoint(const Model& model, const SgdState* optimizer, std::string config_text,
                              std::uint32_t epoch) {
  Checkpoint c;
  c.config_text = std::move(config_text);
  c.epoch = epoch;
  const auto& params = model.registry().params();
  for (const auto& p : params) c.params.push_back(snapshot(p.name, p.tensor));
  if (optimizer) {
    if (optimizer->velocity.size() != params.size()) throw UsageError("optimizer state does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) c.velocity.push_back(snapshot(params[i].name, optimizer->velocity[i]));
  }
  for (const auto& b : model.registry().buffers()) c.buffers.push_back(snapshot(b.name, b.tensor));
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    Writer w(out);
    w.u32(Checkpoint::kVersion);
    w.str(checkpoint.config_text);
    w.u32(checkpoint.epoch);
    write_records(w, checkpoint.params);
    write_records(w, checkpoint.velocity);
    write_records(w, checkpoint.buffers);
    if (!out.flush()) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[sizeof kMagic];
  r.read(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion) r.fail("unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config_text = r.str();
  c.epoch = r.u32();
  c.params = read_records(r);
  c.velocity = read_records(r);
  c.buffers = read_records(r);
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return c;
}

void restore_checkpoint(const Checkpoint& checkpoint, Model& model, SgdState* optimizer) {
  std::vector<std::string> problems;
  std::vector<std::pair<Tensor, const NamedTensor*>> pairs;
  std::vector<std::pair<std::string, Tensor>> expected;
  for (const auto& p : model.registry().params()) expected.emplace_back(p.name, p.tensor);
  match("parameter", expected, checkpoint.params, problems, pairs);
  if (optimizer) {
    if (optimizer->velocity.size() != model.registry().params().size())
      throw UsageError("optimizer state does not match the model");
    if (checkpoint.velocity.empty()) {
      problems.push_back("checkpoint holds no optimizer state");
    } else {
      std::vector<std::pair<std::string, Tensor>> velocity;
      for (std::size_t i = 0; i < expected.size(); ++i) velocity.emplace_back(expected[i].first, optimizer->velocity[i]);
      match("velocity", velocity, checkpoint.velocity, problems, pairs);
    }
  }
  expected.clear();
  for (const auto& b : model.registry().buffers()) expected.emplace_back(b.name, b.tensor);
  match("buffer", expected, checkpoint.buffers, problems, pairs);

  if (!problems.empty()) {
    std::string msg = "checkpoint does not match the model architecture (" + std::to_string(problems.size()) + " issues):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw ConfigError(msg);
  }
  for (auto& [tensor, record] : pairs) {
    if (tensor.dtype() != DType::F32) throw UsageError("checkpoints restore into float32 models only");
    Tensor t = tensor;
    std::copy(record->values.begin(), record->values.end(), t.data<float>().begin());
  }
}

}  // namespace mfnet
