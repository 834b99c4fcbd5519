#include "asc/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace asc {

namespace archive {

namespace {

constexpr std::array<char, 8> kMagic{'A', 'S', 'C', 'A', 'R', 'C', 'H', '\0'};

template <typename T>
void write_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw DataError("archive truncated");
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }

std::string read_string(std::istream& is) {
  const auto n = read_u32(is);
  if (n > (1u << 20)) throw DataError("archive string too long");
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw DataError("archive truncated");
  return s;
}

void write_header(std::ostream& os, ArchiveKind kind, std::uint64_t count) {
  os.write(kMagic.data(), kMagic.size());
  write_u32(os, kArchiveVersion);
  write_u32(os, static_cast<std::uint32_t>(kind));
  write_u64(os, count);
}

std::uint64_t read_header(std::istream& is, ArchiveKind expected) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) throw DataError("not an archive (bad magic)");
  const auto version = read_u32(is);
  if (version != kArchiveVersion) throw DataError("unsupported archive version " + std::to_string(version));
  const auto kind = read_u32(is);
  if (kind != static_cast<std::uint32_t>(expected)) throw DataError("archive holds a different kind of content");
  return read_u64(is);
}

}  // namespace archive

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  archive::write_header(os, ArchiveKind::checkpoint, tensors.size());
  for (const auto& [name, t] : tensors) {
    archive::write_string(os, name);
    archive::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) archive::write_u64(os, static_cast<std::uint64_t>(d));
    for (Scalar v : t.data()) archive::write_f64(os, v);
  }
  if (!os) throw DataError("write failed: " + path.string());
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  const auto count = archive::read_header(is, ArchiveKind::checkpoint);
  std::map<std::string, Tensor> out;
  for (std::uint64_t e = 0; e < count; ++e) {
    std::string name = archive::read_string(is);
    const auto rank = archive::read_u32(is);
    if (rank == 0 || rank > 8) throw DataError("bad rank for " + name);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<Index>(archive::read_u64(is)));
    Buffer values(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : values) v = archive::read_f64(is);
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  return out;
}

void assign_checkpoint(const std::map<std::string, Tensor>& loaded, const NamedTensors& targets) {
  for (const auto& [name, target] : targets) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw DataError("checkpoint is missing " + name);
    if (it->second.shape() != target.shape()) {
      throw DataError("checkpoint shape mismatch for " + name + ": " + shape_string(it->second.shape()) + " vs " +
                      shape_string(target.shape()));
    }
    Tensor t = target;
    std::ranges::copy(it->second.data(), t.mutable_data().begin());
  }
}

}  // namespace asc
