#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

namespace vlltr {

static_assert(std::endian::native == std::endian::little,
              "binary artifact formats assume a little-endian host");

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
Digest sha256_file(const std::filesystem::path& path);
std::string hex(const Digest& d);
Digest digest_from_hex(std::string_view hex);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Little-endian primitive encoding.
namespace bin {

[[noreturn]] void throw_truncated();

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw_truncated();
  return v;
}

void put_magic(std::ostream& os, std::string_view magic);
void expect_magic(std::istream& is, std::string_view magic);

}  // namespace bin
}  // namespace vlltr
