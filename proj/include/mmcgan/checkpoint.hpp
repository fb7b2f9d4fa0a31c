#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mmcgan/tensor.hpp"

namespace mmc {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

// Named-tensor checkpoint. Layout:
//   "MMCW" | u32 version | records...
// record: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f64 values
// Records keep insertion order so a round-trip is byte-identical.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(const std::string& name, const Tensor& t) { entries_.emplace_back(name, t); }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return true;
    return false;
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write("MMCW", 4);
    write_u32(out, kVersion);
    for (const auto& [name, t] : entries_) {
      write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(out, static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
      out.write(reinterpret_cast<const char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "MMCW", 4) != 0)
      throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
      throw std::runtime_error("checkpoint: unsupported version in " + path);
    Checkpoint ck;
    while (true) {
      std::uint32_t name_len = 0;
      if (!try_read_u32(in, name_len)) break;  // clean EOF
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      const std::uint32_t rank = read_u32(in);
      std::vector<std::size_t> shape(rank);
      for (auto& d : shape) d = read_u32(in);
      Tensor t(shape);
      in.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
      if (!in) throw std::runtime_error("checkpoint: truncated record in " + path);
      ck.add(name, t);
    }
    return ck;
  }

 private:
  static void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  }

  static std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated header");
    return v;
  }

  static bool try_read_u32(std::ifstream& in, std::uint32_t& v) {
    in.read(reinterpret_cast<char*>(&v), 4);
    return static_cast<bool>(in);
  }

  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace mmc
