#include "mmworld/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mmworld/tensor_io.hpp"

namespace mmw {

ImageRGB::ImageRGB(int w, int h, std::array<double, 3> fill) : width(w), height(h) {
  pix.resize(static_cast<size_t>(w) * h * 3);
  for (size_t i = 0; i < pix.size(); i += 3) {
    pix[i] = fill[0];
    pix[i + 1] = fill[1];
    pix[i + 2] = fill[2];
  }
}

void ImageRGB::set(int x, int y, const std::array<double, 3>& c) {
  double* p = at(x, y);
  p[0] = c[0];
  p[1] = c[1];
  p[2] = c[2];
}

void save_ppm(const std::string& path, const ImageRGB& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pix.size());
  for (double v : img.pix) {
    const int q = static_cast<int>(std::lround(std::min(1.0, std::max(0.0, v)) * 255.0));
    out.push_back(static_cast<char>(q));
  }
  atomic_write_file(path, out);
}

ImageRGB load_ppm(const std::string& path) {
  const std::string buf = read_file(path);
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {  // comment to end of line
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      while (pos < buf.size() && std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    }
    const size_t start = pos;
    while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) ++pos;
    if (start == pos) throw std::runtime_error(path + ": truncated header at byte " + std::to_string(start));
    return buf.substr(start, pos - start);
  };
  if (token() != "P6") throw std::runtime_error(path + ": expected P6 magic at byte 0");
  const int w = std::stoi(token());
  const int h = std::stoi(token());
  const int maxval = std::stoi(token());
  if (w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error(path + ": unsupported PPM geometry at byte " + std::to_string(pos));
  ++pos;  // single whitespace after maxval
  const size_t need = static_cast<size_t>(w) * h * 3;
  if (buf.size() - pos < need)
    throw std::runtime_error(path + ": truncated payload at byte " + std::to_string(buf.size()));
  ImageRGB img(w, h);
  for (size_t i = 0; i < need; ++i)
    img.pix[i] = static_cast<double>(static_cast<unsigned char>(buf[pos + i])) / 255.0;
  return img;
}

}  // namespace mmw
