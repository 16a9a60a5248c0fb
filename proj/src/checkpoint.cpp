#include "stratmed/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stratmed {

namespace {

constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

[[noreturn]] void fail(const std::filesystem::path& file, const std::string& what) {
  throw std::runtime_error("checkpoint " + file.string() + ": " + what);
}

}  // namespace

void save_checkpoint(const std::vector<Parameter*>& params,
                     const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) fail(file, "cannot open for writing");
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(params.size()));
  for (const Parameter* p : params) {
    write_pod(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_pod(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape) write_pod(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p->value.data.data()),
             static_cast<std::streamsize>(p->value.size() * sizeof(double)));
  }
  if (!os) fail(file, "write failure");
}

void load_checkpoint(const std::vector<Parameter*>& params,
                     const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) fail(file, "cannot open for reading");
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) fail(file, "bad magic");
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != kVersion) fail(file, "unsupported version " + std::to_string(version));
  std::uint64_t count = 0;
  read_pod(is, count);
  if (count != params.size())
    fail(file, "tensor count " + std::to_string(count) + " != expected " +
                   std::to_string(params.size()));
  for (Parameter* p : params) {
    std::uint32_t name_len = 0;
    read_pod(is, name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (name != p->name) fail(file, "tensor name '" + name + "' != expected '" + p->name + "'");
    std::uint32_t rank = 0;
    read_pod(is, rank);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint64_t d = 0;
      read_pod(is, d);
      shape[i] = static_cast<std::size_t>(d);
    }
    if (shape != p->value.shape)
      fail(file, "shape mismatch for '" + name + "': file " + shape_to_string(shape) +
                     " vs expected " + p->value.shape_str());
    is.read(reinterpret_cast<char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    if (!is) fail(file, "truncated tensor data for '" + name + "'");
  }
}

void write_checkpoint_manifest(const std::vector<Parameter*>& params,
                               const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) fail(file, "cannot open for writing");
  for (const Parameter* p : params) {
    os << p->name << " ";
    for (std::size_t i = 0; i < p->value.rank(); ++i) {
      if (i) os << "x";
      os << p->value.shape[i];
    }
    os << "\n";
  }
}

}  // namespace stratmed
