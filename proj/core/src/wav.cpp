#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "spkemb/error.hpp"
#include "spkemb/io.hpp"

namespace spkemb {
namespace {

std::uint16_t read_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  if (!is) raise(ErrorKind::kIo, "unexpected end of WAV header");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

void write_u16(std::ostream& os, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

std::string read_tag(std::istream& is) {
  char tag[4];
  is.read(tag, 4);
  if (!is) return {};
  return std::string(tag, 4);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) raise(ErrorKind::kIntegrity, "unexpected end of file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }
float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  require(n < (1u << 24), ErrorKind::kIntegrity, "implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) raise(ErrorKind::kIntegrity, "unexpected end of file in string");
  return s;
}

void write_f32_array(std::ostream& os, const float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data),
             static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_f32(os, data[i]);
  }
}

void read_f32_array(std::istream& is, float* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) raise(ErrorKind::kIntegrity, "truncated float payload");
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = read_f32(is);
  }
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::kIo, "cannot open " + path.string());
  require(read_tag(is) == "RIFF", ErrorKind::kParse, path.string() + ": not a RIFF file");
  read_u32(is);
  require(read_tag(is) == "WAVE", ErrorKind::kParse, path.string() + ": not a WAVE file");

  Waveform wave;
  bool have_fmt = false;
  for (;;) {
    const std::string tag = read_tag(is);
    require(!tag.empty(), ErrorKind::kParse, path.string() + ": no data chunk");
    const std::uint32_t size = read_u32(is);
    if (tag == "fmt ") {
      const std::uint16_t format = read_u16(is);
      const std::uint16_t channels = read_u16(is);
      wave.sample_rate = static_cast<int>(read_u32(is));
      read_u32(is);  // byte rate
      read_u16(is);  // block align
      const std::uint16_t bits = read_u16(is);
      require(format == 1 && bits == 16, ErrorKind::kParse,
              path.string() + ": only 16-bit PCM is supported");
      require(channels == 1, ErrorKind::kParse, path.string() + ": only mono is supported");
      is.ignore(size - 16);
      have_fmt = true;
    } else if (tag == "data") {
      require(have_fmt, ErrorKind::kParse, path.string() + ": data before fmt chunk");
      const std::size_t n = size / 2;
      std::vector<unsigned char> raw(size);
      is.read(reinterpret_cast<char*>(raw.data()), size);
      require(static_cast<bool>(is), ErrorKind::kIo, path.string() + ": truncated data");
      wave.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto v = static_cast<std::int16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
        wave.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return wave;
    } else {
      is.ignore(size + (size & 1));
    }
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& wave) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::kIo, "cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  os.write("RIFF", 4);
  write_u32(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  write_u32(os, 16);
  write_u16(os, 1);
  write_u16(os, 1);
  write_u32(os, static_cast<std::uint32_t>(wave.sample_rate));
  write_u32(os, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  write_u16(os, 2);
  write_u16(os, 16);
  os.write("data", 4);
  write_u32(os, data_bytes);
  for (float s : wave.samples) {
    const long q = std::clamp(std::lround(double(s) * 32768.0), -32768L, 32767L);
    const auto v = static_cast<std::int16_t>(q);
    write_u16(os, static_cast<std::uint16_t>(v));
  }
  require(static_cast<bool>(os), ErrorKind::kIo, "failed writing " + path.string());
}

}  // namespace spkemb
