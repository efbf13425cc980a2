#include "pfv/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace pfv {

namespace {
[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error("ppm: " + path + ": " + what);
}
}  // namespace

void write_ppm(const std::string& path, const float* rgb, int h, int w) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open for writing");
  f << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> bytes((size_t)h * w * 3);
  for (size_t i = 0; i < bytes.size(); ++i) {
    float v = std::min(1.0f, std::max(0.0f, rgb[i]));
    bytes[i] = (unsigned char)std::lround(v * 255.0f);
  }
  f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  if (!f) fail(path, "write failed");
}

std::vector<float> read_ppm(const std::string& path, int& h, int& w) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(path, "cannot open");
  std::string magic;
  f >> magic;
  if (magic != "P6") fail(path, "not a binary PPM (expected magic P6, got '" + magic + "')");
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines between header fields
    for (;;) {
      int c = f.peek();
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(c)) {
        f.get();
      } else {
        break;
      }
    }
    long long v = -1;
    f >> v;
    if (!f || v < 0) fail(path, "malformed header");
    return v;
  };
  long long ww = next_int(), hh = next_int(), maxval = next_int();
  if (ww <= 0 || hh <= 0 || ww > 1 << 16 || hh > 1 << 16) fail(path, "bad dimensions");
  if (maxval != 255) fail(path, "unsupported maxval (want 255)");
  f.get();  // single whitespace byte before the raster
  std::vector<unsigned char> bytes((size_t)hh * ww * 3);
  f.read((char*)bytes.data(), (std::streamsize)bytes.size());
  if ((size_t)f.gcount() != bytes.size()) fail(path, "truncated raster");
  h = (int)hh;
  w = (int)ww;
  std::vector<float> out(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) out[i] = (float)bytes[i] / 255.0f;
  return out;
}

std::vector<float> resize_bilinear(const std::vector<float>& img, int h, int w, int oh, int ow) {
  if ((size_t)h * w * 3 != img.size()) throw std::runtime_error("resize_bilinear: size mismatch");
  if (h == oh && w == ow) return img;
  std::vector<float> out((size_t)oh * ow * 3);
  for (int i = 0; i < oh; ++i) {
    double sy = ((double)i + 0.5) * h / oh - 0.5;
    int y0 = (int)std::floor(sy);
    double fy = sy - y0;
    int y0c = std::clamp(y0, 0, h - 1), y1c = std::clamp(y0 + 1, 0, h - 1);
    for (int j = 0; j < ow; ++j) {
      double sx = ((double)j + 0.5) * w / ow - 0.5;
      int x0 = (int)std::floor(sx);
      double fx = sx - x0;
      int x0c = std::clamp(x0, 0, w - 1), x1c = std::clamp(x0 + 1, 0, w - 1);
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int y, int x) { return (double)img[(size_t)((y * w + x) * 3 + c)]; };
        double top = at(y0c, x0c) * (1 - fx) + at(y0c, x1c) * fx;
        double bot = at(y1c, x0c) * (1 - fx) + at(y1c, x1c) * fx;
        out[(size_t)((i * ow + j) * 3 + c)] = (float)(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

}  // namespace pfv
