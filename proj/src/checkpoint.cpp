#include "stainkit/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "stainkit/errors.hpp"

namespace stainkit::nn {

namespace {

constexpr char kMagic[8] = {'S', 'K', 'C', 'K', 'P', 'T', '1', '\n'};
constexpr std::uint32_t kVersion = 1;

// All multi-byte fields are little-endian; this code targets LE hosts and
// the writers/readers below keep the byte order explicit.
template <class T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in, const char* what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(std::string("checkpoint: truncated reading ") + what);
  return v;
}

}  // namespace

const Matrix* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return &m;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt,
                     const std::filesystem::path& path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");

  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kVersion);
  const std::string meta = ckpt.meta.dump();
  write_raw(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  write_raw(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    write_raw(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(out, static_cast<std::uint64_t>(m.rows));
    write_raw(out, static_cast<std::uint64_t>(m.cols));
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw IoError(path.string() + " is not a checkpoint file");
  const auto version = read_raw<std::uint32_t>(in, "version");
  if (version != kVersion)
    throw IoError("checkpoint: unsupported format version " +
                  std::to_string(version));

  Checkpoint ckpt;
  const auto meta_len = read_raw<std::uint32_t>(in, "meta length");
  std::string meta(meta_len, '\0');
  in.read(meta.data(), meta_len);
  if (!in) throw IoError("checkpoint: truncated reading metadata");
  try {
    ckpt.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: invalid metadata JSON: ") +
                  e.what());
  }

  const auto n_tensors = read_raw<std::uint32_t>(in, "tensor count");
  ckpt.tensors.reserve(n_tensors);
  for (std::uint32_t t = 0; t < n_tensors; ++t) {
    const auto name_len = read_raw<std::uint32_t>(in, "tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint: truncated reading tensor name");
    const auto rows = read_raw<std::uint64_t>(in, "rows");
    const auto cols = read_raw<std::uint64_t>(in, "cols");
    if (rows > (1u << 24) || cols > (1u << 24))
      throw IoError("checkpoint: implausible tensor shape for " + name);
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(double)));
    if (!in) throw IoError("checkpoint: truncated reading tensor " + name);
    ckpt.tensors.emplace_back(std::move(name), std::move(m));
  }
  return ckpt;
}

}  // namespace stainkit::nn
