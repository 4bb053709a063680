#pragma once

#include <string>

#include "segdetail/mask.hpp"
#include "segdetail/tensor.hpp"

namespace segdetail {

/// Binary PPM (P6, 8-bit). Values in [0,1] are quantized to round(v*255).
void write_ppm(const std::string& path, const Tensor4<float>& image, int sample = 0);
Tensor4<float> read_ppm(const std::string& path);

/// Binary PGM (P5, 8-bit); 255 is the ignore label.
void write_pgm(const std::string& path, const LabelMask& mask);
LabelMask read_pgm(const std::string& path);

}  // namespace segdetail
