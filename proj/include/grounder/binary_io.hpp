#ifndef GROUNDER_BINARY_IO_HPP_
#define GROUNDER_BINARY_IO_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "grounder/errors.hpp"

namespace grounder::binary {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw FormatError("unexpected end of binary stream");
  return value;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  if (n > (1u << 24)) throw FormatError("string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw FormatError("unexpected end of binary stream");
  return s;
}

template <typename T>
void write_array(std::ostream& out, const std::vector<T>& v) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_array(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  if (n > (1u << 28)) throw FormatError("array length out of range");
  std::vector<T> v(n);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(T)));
  if (!in) throw FormatError("unexpected end of binary stream");
  return v;
}

}  // namespace grounder::binary

#endif  // GROUNDER_BINARY_IO_HPP_
