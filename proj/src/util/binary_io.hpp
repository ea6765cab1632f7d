// Little-endian binary helpers shared by the frames sidecar and checkpoints.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xst::binio {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void write_floats(std::ostream& out, const float* data, std::size_t n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
}

inline void read_exact(std::istream& in, void* dst, std::size_t n, const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError(std::string("unexpected end of file reading ") + what);
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  read_exact(in, &v, 4, what);
  return v;
}

inline std::string read_string(std::istream& in, const char* what, std::uint32_t max_len = 1u << 24) {
  const std::uint32_t n = read_u32(in, what);
  if (n > max_len) throw FormatError(std::string("implausible length ") + std::to_string(n) + " for " + what);
  std::string s(n, '\0');
  read_exact(in, s.data(), n, what);
  return s;
}

inline std::vector<float> read_floats(std::istream& in, std::size_t n, const char* what) {
  std::vector<float> v(n);
  read_exact(in, v.data(), n * sizeof(float), what);
  return v;
}

}  // namespace xst::binio
