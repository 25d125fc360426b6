#include "swtt/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>

#include "swtt/errors.hpp"

namespace swtt {

namespace {

std::string lower_ext(const std::filesystem::path& p) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return e;
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_png(const std::filesystem::path& path, const Image& img) {
    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw FormatError("cannot open " + path.string() + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // No time chunk or gamma: output bytes depend only on the pixels.
    png_write_info(png, info);
    for (std::size_t y = 0; y < img.height; ++y) {
        png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels));
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw FormatError("cannot open " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng failed reading " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    Image img;
    img.width = png_get_image_width(png, info);
    img.height = png_get_image_height(png, info);
    img.channels = png_get_channels(png, info);
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("unsupported PNG channel count in " + path.string());
    }
    img.pixels.resize(img.width * img.height * img.channels);
    for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width * img.channels, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_pnm(const std::filesystem::path& path, const Image& img, bool color) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    Image src = img;
    if (color && img.channels == 1) {
        src.channels = 3;
        src.pixels.clear();
        for (std::uint8_t v : img.pixels) src.pixels.insert(src.pixels.end(), {v, v, v});
    } else if (!color && img.channels == 3) {
        src.channels = 1;
        src.pixels.clear();
        for (std::size_t i = 0; i < img.width * img.height; ++i) {
            const int s = img.pixels[3 * i] + img.pixels[3 * i + 1] + img.pixels[3 * i + 2];
            src.pixels.push_back(static_cast<std::uint8_t>((s + 1) / 3));
        }
    }
    os << (color ? "P6" : "P5") << "\n" << src.width << " " << src.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(src.pixels.data()), static_cast<std::streamsize>(src.pixels.size()));
}

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open " + path.string());
    std::string magic;
    is >> magic;
    if (magic != "P5" && magic != "P6") throw FormatError(path.string() + ": only binary P5/P6 netpbm is supported");
    auto next_int = [&]() {
        int v = 0;
        while (is >> std::ws && is.peek() == '#') is.ignore(1 << 20, '\n');
        is >> v;
        return v;
    };
    Image img;
    img.width = static_cast<std::size_t>(next_int());
    img.height = static_cast<std::size_t>(next_int());
    const int maxval = next_int();
    if (maxval != 255) throw FormatError(path.string() + ": only 8-bit netpbm is supported");
    is.get();
    img.channels = magic == "P5" ? 1 : 3;
    img.pixels.resize(img.width * img.height * img.channels);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!is) throw FormatError(path.string() + ": truncated pixel data");
    return img;
}

}  // namespace

void write_image(const std::filesystem::path& path, const Image& img) {
    if (img.pixels.size() != img.width * img.height * img.channels || (img.channels != 1 && img.channels != 3)) {
        throw FormatError("write_image: malformed image");
    }
    const std::string ext = lower_ext(path);
    if (ext == ".png") write_png(path, img);
    else if (ext == ".pgm") write_pnm(path, img, false);
    else if (ext == ".ppm") write_pnm(path, img, true);
    else throw UsageError("unsupported image extension '" + ext + "' (use .png, .pgm or .ppm)");
}

Image read_image(const std::filesystem::path& path) {
    const std::string ext = lower_ext(path);
    if (ext == ".png") return read_png(path);
    if (ext == ".pgm" || ext == ".ppm") return read_pnm(path);
    throw UsageError("unsupported image extension '" + ext + "' (use .png, .pgm or .ppm)");
}

FeatureMap image_to_latent(const Image& img, GridSize latent) {
    FeatureMap f(img.channels, img.height, img.width);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < img.channels; ++c) f.at(c, y, x) = img.at(y, x, c) / 255.0 * 2.0 - 1.0;
    return area_downsample(f, latent);
}

Image latent_to_image(const FeatureMap& f) {
    Image img{f.width(), f.height(), f.channels(), {}};
    img.pixels.resize(f.width() * f.height() * f.channels());
    for (std::size_t y = 0; y < f.height(); ++y)
        for (std::size_t x = 0; x < f.width(); ++x)
            for (std::size_t c = 0; c < f.channels(); ++c) {
                const double v = std::clamp(f.at(c, y, x), -1.0, 1.0);
                img.at(y, x, c) = static_cast<std::uint8_t>(std::lround((v + 1.0) * 0.5 * 255.0));
            }
    return img;
}

Image heatmap(const Tensor& m, std::size_t cell) {
    const std::size_t rows = m.rows(), cols = m.cols();
    double lo = INFINITY, hi = -INFINITY;
    for (double v : m.data()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    Image img{cols * cell, rows * cell, 1, {}};
    img.pixels.resize(img.width * img.height);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const auto v = static_cast<std::uint8_t>(std::lround((m.at(r, c) - lo) / span * 255.0));
            for (std::size_t y = 0; y < cell; ++y)
                for (std::size_t x = 0; x < cell; ++x) img.at(r * cell + y, c * cell + x, 0) = v;
        }
    return img;
}

}  // namespace swtt
