#pragma once

#include <array>
#include <string>
#include <vector>

namespace mmw {

/// Interleaved RGB image with channels in [0,1].
struct ImageRGB {
  int width = 0;
  int height = 0;
  std::vector<double> pix;  // height*width*3 row-major

  ImageRGB() = default;
  ImageRGB(int w, int h, std::array<double, 3> fill = {0, 0, 0});

  double* at(int x, int y) { return pix.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const double* at(int x, int y) const {
    return pix.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
  void set(int x, int y, const std::array<double, 3>& c);
};

// Binary PPM (P6), 8 bits per channel.
void save_ppm(const std::string& path, const ImageRGB& img);
ImageRGB load_ppm(const std::string& path);

}  // namespace mmw
