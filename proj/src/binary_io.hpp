#pragma once

// Little helpers for the versioned binary artifact files. Values are written
// in host byte order; artifacts are not meant to move between architectures.

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "kinject/errors.hpp"

namespace kinject::io {

template <typename T>
  requires std::is_trivially_copyable_v<T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T read_pod(std::istream& in, const std::string& what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ArtifactError("truncated artifact while reading " + what);
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, const std::string& what) {
  const auto n = read_pod<std::uint32_t>(in, what);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw ArtifactError("truncated artifact while reading " + what);
  return s;
}

inline void write_doubles(std::ostream& out, std::span<const double> values) {
  write_pod<std::uint64_t>(out, values.size());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size_bytes()));
}

inline std::vector<double> read_doubles(std::istream& in, const std::string& what) {
  const auto n = read_pod<std::uint64_t>(in, what);
  std::vector<double> values(n);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ArtifactError("truncated artifact while reading " + what);
  return values;
}

/// Writes a 4-byte magic tag followed by a one-byte format version.
inline void write_header(std::ostream& out, const char (&magic)[5], std::uint8_t version) {
  out.write(magic, 4);
  write_pod(out, version);
}

inline void check_header(std::istream& in, const char (&magic)[5], std::uint8_t version,
                         const std::string& path) {
  char tag[4] = {};
  in.read(tag, 4);
  if (!in || std::string(tag, 4) != std::string(magic, 4)) {
    throw ArtifactError(path + ": not a " + std::string(magic, 4) + " file");
  }
  const auto found = read_pod<std::uint8_t>(in, "format version");
  if (found != version) {
    throw ArtifactError(path + ": format version " + std::to_string(found) + ", expected " +
                        std::to_string(version));
  }
}

}  // namespace kinject::io
