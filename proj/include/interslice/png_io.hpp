#pragma once

// PNG IO for frame sequences and rendered reports, backed by libpng.
// Frame sequences are directories of 8-bit grayscale or RGB PNGs whose
// lexicographic filename order is the temporal order.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "interslice/frame.hpp"

namespace isr {

struct PngImage {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 (gray) or 3 (rgb)
    std::vector<uint8_t> data;  // row-major, interleaved

    uint8_t at(int i, int j, int c) const {
        return data[(static_cast<size_t>(i) * width + j) * channels + c];
    }
};

namespace detail {

struct PngFile {
    FILE* f = nullptr;
    explicit PngFile(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {
        if (!f) throw io_error("cannot open '" + path + "' (" + mode + ")");
    }
    ~PngFile() {
        if (f) std::fclose(f);
    }
    PngFile(const PngFile&) = delete;
    PngFile& operator=(const PngFile&) = delete;
};

}  // namespace detail

inline PngImage read_png(const std::string& path) {
    detail::PngFile file(path, "rb");

    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8))
        throw format_error("'" + path + "' is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        throw io_error("libpng init failed for '" + path + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("libpng failed to decode '" + path + "'");
    }

    png_init_io(png, file.f);
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    // Fold everything down to 8-bit gray or rgb.
    png_set_expand(png);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    PngImage img;
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw format_error("'" + path + "': unsupported channel count " +
                           std::to_string(img.channels));
    }

    img.data.resize(static_cast<size_t>(img.height) * img.width * img.channels);
    std::vector<png_bytep> rows(img.height);
    for (int i = 0; i < img.height; ++i)
        rows[i] = img.data.data() + static_cast<size_t>(i) * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const PngImage& img, const std::string& path) {
    if (img.channels != 1 && img.channels != 3)
        throw value_error("write_png: channels must be 1 or 3");
    detail::PngFile file(path, "wb");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        throw io_error("libpng init failed for '" + path + "'");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw io_error("libpng failed to encode '" + path + "'");
    }

    png_init_io(png, file.f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<png_bytep> rows(img.height);
    for (int i = 0; i < img.height; ++i)
        rows[i] = const_cast<png_bytep>(img.data.data() +
                                        static_cast<size_t>(i) * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ITU-R BT.601 luma. Input bytes are scaled to [0,1] first.
inline Frame frame_from_png(const PngImage& img) {
    Frame f(img.height, img.width);
    for (int i = 0; i < img.height; ++i)
        for (int j = 0; j < img.width; ++j) {
            if (img.channels == 1) {
                f.at(i, j) = img.at(i, j, 0) / 255.0;
            } else {
                f.at(i, j) = (0.299 * img.at(i, j, 0) + 0.587 * img.at(i, j, 1) +
                              0.114 * img.at(i, j, 2)) /
                             255.0;
            }
        }
    return f;
}

inline PngImage png_from_frame(const Frame& f) {
    PngImage img;
    img.height = f.height();
    img.width = f.width();
    img.channels = 1;
    img.data.resize(f.size());
    for (size_t i = 0; i < f.size(); ++i) {
        const scalar v = std::clamp(f.data()[i], scalar{0}, scalar{1});
        img.data[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return img;
}

inline void save_frame_png(const Frame& f, const std::string& path) {
    write_png(png_from_frame(f), path);
}

// Loads a directory of PNGs as one sequence: grayscale conversion, bilinear
// resize to (h, w), then a joint min-max normalization over the whole clip.
inline FrameSequence load_frame_sequence(const std::string& dir, int resize_h, int resize_w) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw io_error("'" + dir + "' is not a directory");

    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext == ".png") files.push_back(e.path().string());
    }
    if (files.empty()) throw io_error("'" + dir + "' contains no PNG frames");
    std::sort(files.begin(), files.end());

    std::vector<Frame> frames;
    frames.reserve(files.size());
    for (const auto& f : files) frames.push_back(resize_bilinear(frame_from_png(read_png(f)), resize_h, resize_w));

    // joint normalization keeps relative brightness between frames intact
    scalar lo = frames[0].data()[0], hi = lo;
    for (const auto& f : frames)
        for (size_t i = 0; i < f.size(); ++i) {
            lo = std::min(lo, f.data()[i]);
            hi = std::max(hi, f.data()[i]);
        }
    const scalar range = hi - lo;
    for (auto& f : frames)
        for (size_t i = 0; i < f.size(); ++i)
            f.data()[i] = range == 0.0 ? scalar{0} : (f.data()[i] - lo) / range;

    return FrameSequence(std::move(frames), fs::path(dir).filename().string());
}

}  // namespace isr
