#include "dns/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dns/errors.hpp"

namespace dns {

namespace {

constexpr char kMagic[8] = {'D', 'N', 'S', 'A', 'R', 'R', '\0', '\1'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError("container truncated");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

void write_stream(std::ostream& out, const Container& c) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kContainerVersion);
  const std::string meta = c.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.arrays.size()));
  for (const auto& a : c.arrays) {
    require(a.name.size() < 65536, "array name too long");
    require(a.shape.size() < 256, "array rank too large");
    require(a.element_count() == a.values.size(),
            "array '" + a.name + "' shape does not match value count");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.shape.size()));
    for (auto d : a.shape) put<std::uint64_t>(out, d);
    if constexpr (std::endian::native == std::endian::little) {
      out.write(reinterpret_cast<const char*>(a.values.data()),
                static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    } else {
      for (double v : a.values) put<double>(out, v);
    }
  }
}

Container read_stream(std::istream& in,
                      const std::optional<std::set<std::string>>& only) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a DNS array container (bad magic)");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  Container c;
  const auto meta_len = get<std::uint64_t>(in);
  std::string meta(meta_len, '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta_len))) {
    throw FormatError("container truncated in metadata");
  }
  try {
    c.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container metadata is not valid JSON: ") + e.what());
  }
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name.resize(get<std::uint16_t>(in));
    if (!in.read(a.name.data(), static_cast<std::streamsize>(a.name.size()))) {
      throw FormatError("container truncated in array name");
    }
    const auto ndim = get<std::uint8_t>(in);
    for (unsigned d = 0; d < ndim; ++d) a.shape.push_back(get<std::uint64_t>(in));
    const auto n = a.element_count();
    if (only && !only->contains(a.name)) {
      in.seekg(static_cast<std::streamoff>(n * sizeof(double)), std::ios::cur);
      if (!in) throw FormatError("container truncated in array data");
      continue;
    }
    a.values.resize(n);
    if constexpr (std::endian::native == std::endian::little) {
      if (!in.read(reinterpret_cast<char*>(a.values.data()),
                   static_cast<std::streamsize>(n * sizeof(double)))) {
        throw FormatError("container truncated in array data");
      }
    } else {
      for (auto& v : a.values) v = get<double>(in);
    }
    c.arrays.push_back(std::move(a));
  }
  return c;
}

}  // namespace

std::uint64_t NamedArray::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1},
                         std::multiplies<>());
}

const NamedArray* Container::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Container::at(const std::string& name) const {
  const auto* a = find(name);
  if (!a) throw FormatError("container has no array named '" + name + "'");
  return *a;
}

void Container::add(std::string name, std::vector<std::uint64_t> shape,
                    std::vector<double> values) {
  arrays.push_back({std::move(name), std::move(shape), std::move(values)});
}

std::string serialize(const Container& c) {
  std::ostringstream out(std::ios::binary);
  write_stream(out, c);
  return std::move(out).str();
}

Container deserialize(const std::string& bytes,
                      const std::optional<std::set<std::string>>& only) {
  std::istringstream in(bytes, std::ios::binary);
  return read_stream(in, only);
}

void write_container(const std::filesystem::path& path, const Container& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + tmp.string() + " for writing");
    write_stream(out, c);
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path,
                         const std::optional<std::set<std::string>>& only) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_stream(in, only);
}

}  // namespace dns
