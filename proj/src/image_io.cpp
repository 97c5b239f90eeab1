#include "chroma/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

#include "chroma/error.hpp"

namespace chroma {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open " + path);
    return f;
}

// Skips whitespace and '#' comment lines between PPM header tokens.
int ppm_int(std::FILE* f, const std::string& path) {
    int c = std::fgetc(f);
    while (c == '#' || std::isspace(c)) {
        if (c == '#')
            while (c != '\n' && c != EOF) c = std::fgetc(f);
        c = std::fgetc(f);
    }
    int value = 0;
    bool any = false;
    while (std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = std::fgetc(f);
    }
    if (!any) throw DataError(path + ": malformed ppm header");
    return value;
}

ImageU8 read_ppm(std::FILE* f, const std::string& path) {
    char magic[2];
    if (std::fread(magic, 1, 2, f) != 2 || magic[0] != 'P' || magic[1] != '6')
        throw DataError(path + ": not a P6 ppm file");
    const int width = ppm_int(f, path);
    const int height = ppm_int(f, path);
    const int maxval = ppm_int(f, path);
    if (width < 1 || height < 1) throw DataError(path + ": bad ppm dimensions");
    if (maxval != 255) throw DataError(path + ": only 8-bit ppm is supported");
    ImageU8 img(height, width, 3);
    if (std::fread(img.pixels.data(), 1, img.pixels.size(), f) != img.pixels.size())
        throw DataError(path + ": truncated ppm pixel data");
    return img;
}

ImageU8 read_png(std::FILE* f, const std::string& path) {
    png_byte header[8];
    if (std::fread(header, 1, 8, f) != 8 || png_sig_cmp(header, 0, 8))
        throw DataError(path + ": not a png file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError(path + ": png reader allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError(path + ": png info allocation failed");
    }
    std::vector<png_bytep> row_ptrs;
    ImageU8 img;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path + ": png decode failed");
    }
    png_init_io(png, f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const png_byte color_type = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int height = static_cast<int>(png_get_image_height(png, info));
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int channels = static_cast<int>(png_get_channels(png, info));
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError(path + ": unsupported png layout with " + std::to_string(channels) +
                        " channels");
    }
    img = ImageU8(height, width, channels);
    row_ptrs.resize(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y)
        row_ptrs[static_cast<std::size_t>(y)] =
            img.pixels.data() + static_cast<std::size_t>(y) * width * channels;
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

}  // namespace

ImageU8 read_image(const std::string& path) {
    FilePtr f = open_file(path, "rb");
    unsigned char magic[2] = {0, 0};
    if (std::fread(magic, 1, 2, f.get()) != 2) throw DataError(path + ": empty or unreadable");
    std::rewind(f.get());
    if (magic[0] == 'P' && magic[1] == '6') return read_ppm(f.get(), path);
    if (magic[0] == 0x89 && magic[1] == 'P') return read_png(f.get(), path);
    throw DataError(path + ": unrecognized image format");
}

void write_ppm(const std::string& path, const ImageU8& img) {
    if (img.channels != 3) throw UsageError("write_ppm: only 3-channel images");
    FilePtr f = open_file(path, "wb");
    std::fprintf(f.get(), "P6\n%d %d\n255\n", img.width, img.height);
    if (std::fwrite(img.pixels.data(), 1, img.pixels.size(), f.get()) != img.pixels.size())
        throw DataError(path + ": short write");
}

void write_png(const std::string& path, const ImageU8& img) {
    if (img.channels != 1 && img.channels != 3)
        throw UsageError("write_png: images must have 1 or 3 channels");
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError(path + ": png writer allocation failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError(path + ": png info allocation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError(path + ": png encode failed");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> row_ptrs(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        row_ptrs[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels);
    png_write_image(png, row_ptrs.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

ImageU8 center_crop_resize(const ImageU8& img, int size) {
    if (size < 1) throw UsageError("center_crop_resize: size must be positive");
    if (img.height < 1 || img.width < 1) throw DataError("center_crop_resize: empty image");
    const int side = std::min(img.height, img.width);
    const int off_y = (img.height - side) / 2;
    const int off_x = (img.width - side) / 2;

    ImageU8 out(size, size, img.channels);
    const double scale = static_cast<double>(side) / size;
    for (int y = 0; y < size; ++y) {
        // Half-pixel-center mapping keeps the resample symmetric.
        const double sy = std::clamp((y + 0.5) * scale - 0.5, 0.0, side - 1.0);
        const int y0 = static_cast<int>(sy);
        const int y1 = std::min(y0 + 1, side - 1);
        const double fy = sy - y0;
        for (int x = 0; x < size; ++x) {
            const double sx = std::clamp((x + 0.5) * scale - 0.5, 0.0, side - 1.0);
            const int x0 = static_cast<int>(sx);
            const int x1 = std::min(x0 + 1, side - 1);
            const double fx = sx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double top = (1.0 - fx) * img.at(off_y + y0, off_x + x0, c) +
                                   fx * img.at(off_y + y0, off_x + x1, c);
                const double bottom = (1.0 - fx) * img.at(off_y + y1, off_x + x0, c) +
                                      fx * img.at(off_y + y1, off_x + x1, c);
                const double value = (1.0 - fy) * top + fy * bottom;
                out.at(y, x, c) = static_cast<unsigned char>(std::lround(value));
            }
        }
    }
    return out;
}

}  // namespace chroma
