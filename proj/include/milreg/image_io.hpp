#pragma once
// Raster I/O: binary PPM (P6) and 8-bit PNG, always surfaced as RGB.
#include <cstdint>
#include <string>
#include <vector>

namespace milreg {

struct ImageU8 {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  std::uint8_t* at(int x, int y) { return pixels.data() + 3 * (y * width + x); }
  const std::uint8_t* at(int x, int y) const { return pixels.data() + 3 * (y * width + x); }
};

ImageU8 read_image(const std::string& path);  // dispatches on extension
void write_png(const std::string& path, const ImageU8& img);
void write_ppm(const std::string& path, const ImageU8& img);

}  // namespace milreg
