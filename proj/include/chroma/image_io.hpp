// Image file handling: binary PPM (P6) and PNG in both directions, format
// sniffing by magic bytes, and the crop/resize preprocessing used during
// ingestion.
#pragma once

#include <string>

#include "chroma/image.hpp"

namespace chroma {

// Reads a PPM or PNG file, dispatching on the leading magic bytes.
ImageU8 read_image(const std::string& path);

void write_ppm(const std::string& path, const ImageU8& img);
void write_png(const std::string& path, const ImageU8& img);

// Largest centered square, then bilinear resample to size x size.
ImageU8 center_crop_resize(const ImageU8& img, int size);

}  // namespace chroma
