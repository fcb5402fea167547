#include "rhrn/netpbm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

namespace rhrn {
namespace {

class HeaderReader {
 public:
  HeaderReader(const std::filesystem::path& path, std::vector<char> bytes)
      : path_(path), bytes_(std::move(bytes)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError(path_.string() + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void expect_magic(const char* magic) {
    if (bytes_.size() < 2 || bytes_[0] != magic[0] || bytes_[1] != magic[1]) {
      fail(std::string("bad magic, expected ") + magic);
    }
    pos_ = 2;
  }

  long read_int() {
    skip_space();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) fail("malformed header");
    long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1 << 24) fail("header value too large");
      ++pos_;
    }
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail("missing whitespace before raster");
    }
    return pos_ + 1;
  }

  const std::vector<char>& bytes() const { return bytes_; }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::filesystem::path path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename Image>
Image read_raster(const std::filesystem::path& path, const char* magic, int channels) {
  HeaderReader reader(path, slurp(path));
  reader.expect_magic(magic);
  const long width = reader.read_int();
  const long height = reader.read_int();
  const long maxval = reader.read_int();
  if (width <= 0 || height <= 0) reader.fail("non-positive image size");
  if (maxval != 255) reader.fail("only 8-bit maxval 255 is supported, got " + std::to_string(maxval));
  const std::size_t start = reader.raster_start();
  const auto expected = static_cast<std::size_t>(width * height * channels);
  const std::size_t available = reader.bytes().size() - start;
  if (available != expected) {
    throw ValidationError(path.string() + ": raster holds " + std::to_string(available) + " bytes, expected " +
                          std::to_string(expected) + " at byte offset " + std::to_string(start));
  }
  Image image;
  image.width = width;
  image.height = height;
  image.pixels.assign(reader.bytes().begin() + static_cast<std::ptrdiff_t>(start), reader.bytes().end());
  return image;
}

void write_raster(const std::filesystem::path& path, const char* magic, Index width, Index height,
                  const std::vector<std::uint8_t>& pixels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError(path.string() + ": cannot open for writing");
  out << magic << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw ValidationError(path.string() + ": write failed");
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) { return read_raster<GrayImage>(path, "P5", 1); }

RgbImage read_ppm(const std::filesystem::path& path) { return read_raster<RgbImage>(path, "P6", 3); }

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  write_raster(path, "P5", image.width, image.height, image.pixels);
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_raster(path, "P6", image.width, image.height, image.pixels);
}

}  // namespace rhrn
