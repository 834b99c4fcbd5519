#ifndef ASC_CHECKPOINT_HPP
#define ASC_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "asc/tensor.hpp"

namespace asc {

/// Archive layout (all integers and reals little-endian):
///   magic "ASCARCH\0" | u32 version | u32 kind | u64 entry count | entries...
/// A checkpoint entry is: u32 path length | path bytes | u32 rank | u64 dims[rank] | f64 values.
enum class ArchiveKind : std::uint32_t { checkpoint = 1, embedding_cache = 2 };

inline constexpr std::uint32_t kArchiveVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace archive {

void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);

void write_header(std::ostream& os, ArchiveKind kind, std::uint64_t count);
/// Returns the entry count; throws DataError on a bad magic, version or kind.
std::uint64_t read_header(std::istream& is, ArchiveKind expected);

}  // namespace archive

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path);

/// Copies loaded values into `targets` in place. Every target path must be
/// present with a matching shape.
void assign_checkpoint(const std::map<std::string, Tensor>& loaded, const NamedTensors& targets);

}  // namespace asc

#endif  // ASC_CHECKPOINT_HPP
