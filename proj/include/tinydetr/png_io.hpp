#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "tinydetr/tensor.hpp"

namespace tinydetr {

// Row-major 8-bit RGB raster.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<unsigned char> rgb;  // width * height * 3
};

// Lossless PNG (8-bit truecolor). The writer emits unfiltered scanlines; the
// reader accepts any PNG that is 8-bit RGB, including all five filter types.
void write_png_rgb8(const std::string& path, const Image8& image);
Image8 read_png_rgb8(const std::string& path);

// [3,H,W] tensor with values on the k/255 grid <-> 8-bit raster. The tensor
// side quantizes by rounding, so tensor -> image -> tensor is exact for
// tensors already on the grid.
Tensor image_to_tensor(const Image8& image);
Image8 tensor_to_image(const Tensor& image);

}  // namespace tinydetr
