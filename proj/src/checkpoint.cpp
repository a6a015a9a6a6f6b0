#include "vlltr/checkpoint.hpp"

#include <sstream>

#include "vlltr/error.hpp"

namespace vlltr {
namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void put_string(std::ostream& os, const std::string& s) {
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = bin::get<std::uint32_t>(is);
  if (n > (1u << 20)) throw IoError("checkpoint string length is implausible");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) bin::throw_truncated();
  return s;
}

}  // namespace

void Checkpoint::put(std::string name, Tensor t) {
  for (auto& [n, v] : sections)
    if (n == name) {
      v = std::move(t);
      return;
    }
  sections.emplace_back(std::move(name), std::move(t));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, v] : sections)
    if (n == name) return true;
  return false;
}

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, v] : sections)
    if (n == name) return v;
  throw IoError("checkpoint has no section '" + name + "'");
}

std::vector<std::string> Checkpoint::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [n, v] : sections)
    if (n.starts_with(prefix)) out.push_back(n);
  return out;
}

std::string Checkpoint::serialize() const {
  std::ostringstream os(std::ios::binary);
  bin::put_magic(os, "VLCK");
  bin::put<std::uint32_t>(os, kCheckpointVersion);
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    put_string(os, k);
    put_string(os, v);
  }
  bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, t] : sections) {
    put_string(os, name);
    bin::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) bin::put<std::uint64_t>(os, e);
    for (double v : t.data()) bin::put<double>(os, v);
  }
  return os.str();
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  bin::expect_magic(is, "VLCK");
  const auto version = bin::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto n_meta = bin::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = get_string(is);
    ck.meta[k] = get_string(is);
  }
  const auto n_sec = bin::get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_sec; ++i) {
    auto name = get_string(is);
    const auto rank = bin::get<std::uint32_t>(is);
    if (rank == 0 || rank > 8) throw IoError("checkpoint section '" + name + "' has bad rank");
    Shape shape(rank);
    for (auto& e : shape) e = bin::get<std::uint64_t>(is);
    if (shape_numel(shape) > (std::size_t{1} << 28))
      throw IoError("checkpoint section '" + name + "' is implausibly large");
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = bin::get<double>(is);
    ck.sections.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in checkpoint");
  return ck;
}

void Checkpoint::write(const std::filesystem::path& path) const { write_file(path, serialize()); }

Checkpoint Checkpoint::read(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

}  // namespace vlltr
