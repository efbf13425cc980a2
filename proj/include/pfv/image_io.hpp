#pragma once

#include <string>
#include <vector>

namespace pfv {

// 8-bit binary PPM (P6). Values quantize [0,1] -> 0..255 on write and map
// back to [0,1] on read. Failures raise std::runtime_error naming the path.
void write_ppm(const std::string& path, const float* rgb, int h, int w);
std::vector<float> read_ppm(const std::string& path, int& h, int& w);

// Bilinear resample of an (h,w,3) image to (oh,ow,3), edge-clamped.
std::vector<float> resize_bilinear(const std::vector<float>& img, int h, int w, int oh, int ow);

}  // namespace pfv
