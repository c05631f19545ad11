#include "volseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace volseg {

namespace {

constexpr char kMagic[4] = {'V', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <typename V>
  void pod(V v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void floats(std::span<const float> v) {
    pod<std::uint64_t>(v.size());
    out_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::ifstream& in, std::string where) : in_(in), where_(std::move(where)) {}
  template <typename V>
  V pod() {
    V v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(V));
    check();
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    if (n > (1u << 20)) throw FormatError(FormatIssue::bad_header, where_ + ": implausible name length");
    std::string s(n, '\0');
    in_.read(s.data(), n);
    check();
    return s;
  }
  void floats_into(std::span<float> dst, const std::string& what) {
    const auto n = pod<std::uint64_t>();
    if (n != dst.size()) {
      throw FormatError(FormatIssue::bad_header, where_ + ": '" + what + "' has " + std::to_string(n) +
                                                     " values, expected " + std::to_string(dst.size()));
    }
    in_.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(n * sizeof(float)));
    check();
  }

 private:
  void check() {
    if (!in_) throw FormatError(FormatIssue::truncated, where_ + " ends early");
  }
  std::ifstream& in_;
  std::string where_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, Optimizer<float>& optimizer,
                     const CheckpointInfo& info) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    Writer w(out);
    out.write(kMagic, 4);
    w.pod(kVersion);
    w.pod(info.fingerprint);
    w.pod(info.epoch);
    w.pod(info.best_val_f1);
    w.pod(info.best_epoch);
    w.pod(optimizer.steps());
    for (const auto& group : {model.named_parameters(), model.named_buffers()}) {
      w.pod<std::uint64_t>(group.size());
      for (const auto& [name, t] : group) {
        w.str(name);
        w.floats(t.data());
      }
    }
    const auto state = optimizer.state_buffers();
    w.pod<std::uint64_t>(state.size());
    for (const auto* buf : state) w.floats(*buf);
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointInfo load_checkpoint(const std::filesystem::path& path, Model<float>& model, Optimizer<float>& optimizer,
                               std::uint64_t expected_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(FormatIssue::bad_magic, path.string() + " is not a checkpoint");
  if (r.pod<std::uint32_t>() != kVersion) throw FormatError(FormatIssue::bad_version, path.string() + " has an unknown version");
  CheckpointInfo info;
  info.fingerprint = r.pod<std::uint64_t>();
  if (info.fingerprint != expected_fingerprint) {
    throw StateError("checkpoint " + path.string() + " was written for a different configuration");
  }
  info.epoch = r.pod<std::int64_t>();
  info.best_val_f1 = r.pod<double>();
  info.best_epoch = r.pod<std::int64_t>();
  const auto steps = r.pod<std::int64_t>();
  for (auto group : {model.named_parameters(), model.named_buffers()}) {
    const auto count = r.pod<std::uint64_t>();
    if (count != group.size()) throw FormatError(FormatIssue::bad_header, path.string() + ": tensor count differs from the model");
    for (auto& [name, t] : group) {
      const auto stored = r.str();
      if (stored != name) throw FormatError(FormatIssue::bad_header, path.string() + ": found '" + stored + "' where '" + name + "' was expected");
      r.floats_into(t.mutable_data(), name);
    }
  }
  auto state = optimizer.state_buffers();
  if (r.pod<std::uint64_t>() != state.size()) throw FormatError(FormatIssue::bad_header, path.string() + ": optimizer state differs");
  for (std::size_t i = 0; i < state.size(); ++i) r.floats_into(*state[i], "optimizer state " + std::to_string(i));
  optimizer.set_steps(steps);
  optimizer.zero_grad();
  return info;
}

}  // namespace volseg
