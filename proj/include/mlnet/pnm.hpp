#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "mlnet/error.hpp"

// Reader/writer for the binary and ASCII PNM formats (P2/P3 ASCII, P5/P6
// binary), 8-bit only. Parse errors carry the byte offset at which they were
// detected. Round trips are lossless for 8-bit data.

namespace mlnet {

struct PnmImage {
  std::int64_t width = 0, height = 0;
  int channels = 1;  // 1 (grayscale) or 3 (RGB)
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels

  std::int64_t count() const { return width * height * channels; }
  bool operator==(const PnmImage&) const = default;
};

namespace detail {

class PnmCursor {
 public:
  explicit PnmCursor(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return at_; }
  bool eof() const { return at_ >= bytes_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw DataError("invalid PNM at byte " + std::to_string(at_) + ": " + why);
  }

  std::uint8_t byte() {
    if (eof()) fail("unexpected end of data");
    return bytes_[at_++];
  }

  // Skips whitespace and '#' comments between header tokens.
  void skip_separators() {
    while (!eof()) {
      const std::uint8_t c = bytes_[at_];
      if (c == '#') {
        while (!eof() && bytes_[at_] != '\n') ++at_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n' ||
                 c == '\v' || c == '\f') {
        ++at_;
      } else {
        break;
      }
    }
  }

  std::int64_t integer() {
    skip_separators();
    if (eof()) fail("expected integer");
    if (bytes_[at_] < '0' || bytes_[at_] > '9') fail("expected digit");
    std::int64_t value = 0;
    while (!eof() && bytes_[at_] >= '0' && bytes_[at_] <= '9') {
      value = value * 10 + (bytes_[at_] - '0');
      if (value > 1'000'000'000) fail("integer out of range");
      ++at_;
    }
    return value;
  }

  std::span<const std::uint8_t> raw(std::size_t n) {
    if (at_ + n > bytes_.size()) {
      throw DataError("truncated PNM: need " + std::to_string(n) +
                      " bytes at offset " + std::to_string(at_) +
                      ", only " + std::to_string(bytes_.size() - at_) +
                      " available");
    }
    auto out = bytes_.subspan(at_, n);
    at_ += n;
    return out;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

}  // namespace detail

inline PnmImage parse_pnm(std::span<const std::uint8_t> bytes) {
  detail::PnmCursor cur(bytes);
  if (bytes.size() < 2) cur.fail("too short for a magic number");
  const char m0 = static_cast<char>(cur.byte());
  const char m1 = static_cast<char>(cur.byte());
  if (m0 != 'P' || (m1 != '2' && m1 != '3' && m1 != '5' && m1 != '6')) {
    throw DataError("invalid PNM at byte 0: unsupported magic '" +
                    std::string{m0, m1} + "'");
  }
  const bool binary = m1 == '5' || m1 == '6';
  const int channels = (m1 == '3' || m1 == '6') ? 3 : 1;

  PnmImage img;
  img.channels = channels;
  img.width = cur.integer();
  img.height = cur.integer();
  if (img.width < 1 || img.height < 1) cur.fail("non-positive dimensions");
  const std::int64_t maxval = cur.integer();
  if (maxval < 1 || maxval > 255) {
    cur.fail("maxval " + std::to_string(maxval) +
             " unsupported (8-bit only)");
  }
  img.pixels.resize(static_cast<std::size_t>(img.count()));

  if (binary) {
    const std::uint8_t sep = cur.byte();
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n') {
      cur.fail("expected single whitespace after maxval");
    }
    auto raw = cur.raw(static_cast<std::size_t>(img.count()));
    std::copy(raw.begin(), raw.end(), img.pixels.begin());
  } else {
    for (auto& px : img.pixels) {
      const std::int64_t v = cur.integer();
      if (v > maxval) cur.fail("sample above maxval");
      px = static_cast<std::uint8_t>(v);
    }
  }
  return img;
}

inline PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return parse_pnm(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

inline std::vector<std::uint8_t> encode_pnm(const PnmImage& img,
                                            bool binary = true) {
  if (img.channels != 1 && img.channels != 3) {
    throw ValueError("PNM supports 1 or 3 channels, got " +
                     std::to_string(img.channels));
  }
  if (static_cast<std::int64_t>(img.pixels.size()) != img.count()) {
    throw ShapeError("PNM pixel buffer size " +
                     std::to_string(img.pixels.size()) +
                     " does not match dimensions");
  }
  std::string header;
  header += img.channels == 3 ? (binary ? "P6" : "P3") : (binary ? "P5" : "P2");
  header += "\n" + std::to_string(img.width) + " " +
            std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  if (binary) {
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  } else {
    std::string body;
    for (std::int64_t i = 0; i < img.count(); ++i) {
      body += std::to_string(img.pixels[static_cast<std::size_t>(i)]);
      body += (i + 1) % 16 == 0 ? '\n' : ' ';
    }
    body += '\n';
    out.insert(out.end(), body.begin(), body.end());
  }
  return out;
}

inline void write_pnm(const std::filesystem::path& path, const PnmImage& img,
                      bool binary = true) {
  const auto bytes = encode_pnm(img, binary);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

}  // namespace mlnet
