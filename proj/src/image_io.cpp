#include "ipldm/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ipldm {

namespace {

std::vector<unsigned char> quantize(const Tensor& image) {
    if (image.ndim() != 3 || image.dim(0) != 1)
        throw DimError("image I/O expects [1,H,W], got " + shape_str(image.shape()));
    std::vector<unsigned char> bytes(static_cast<std::size_t>(image.numel()));
    for (int64_t i = 0; i < image.numel(); ++i) {
        float v = std::min(1.0f, std::max(0.0f, image.data()[i]));
        bytes[static_cast<std::size_t>(i)] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    return bytes;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& image) {
    auto bytes = quantize(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot open " + path + " for writing");
    out << "P5\n" << image.dim(2) << " " << image.dim(1) << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ContractError("short write to " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw ContractError(path + ": not a binary PGM (P5) file");
    // Skip whitespace and comment lines between header tokens.
    auto next_int = [&in, &path]() {
        for (;;) {
            int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        int64_t v;
        if (!(in >> v)) throw ContractError(path + ": malformed PGM header");
        return v;
    };
    int64_t w = next_int(), h = next_int(), maxval = next_int();
    if (maxval != 255) throw ContractError(path + ": only maxval 255 supported");
    in.get();  // single whitespace after header
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w * h));
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw ContractError(path + ": truncated PGM payload");
    Tensor img = Tensor::zeros({1, h, w});
    for (int64_t i = 0; i < w * h; ++i)
        img.data()[i] = static_cast<float>(bytes[static_cast<std::size_t>(i)]) / 255.0f;
    return img;
}

void write_png(const std::string& path, const Tensor& image) {
    auto bytes = quantize(image);
    int64_t h = image.dim(1), w = image.dim(2);
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ContractError("cannot open " + path + " for writing");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw ContractError("libpng failed writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < h; ++y)
        png_write_row(png, bytes.data() + y * w);
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Tensor read_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ContractError("cannot open " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ContractError("libpng failed reading " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_uint_32 w = png_get_image_width(png, info);
    png_uint_32 h = png_get_image_height(png, info);
    // Normalize any color type down to 8-bit grayscale.
    png_byte color = png_get_color_type(png, info);
    png_byte depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1.0, -1.0);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    std::vector<unsigned char> row(w);
    Tensor img = Tensor::zeros({1, static_cast<int64_t>(h), static_cast<int64_t>(w)});
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x)
            img.data()[y * w + x] = static_cast<float>(row[x]) / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void write_image(const std::string& path, const Tensor& image) {
    if (ends_with(path, ".png"))
        write_png(path, image);
    else
        write_pgm(path, image);
}

Tensor read_image(const std::string& path) {
    if (ends_with(path, ".png")) return read_png(path);
    return read_pgm(path);
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream out(path);
    if (!out) throw ContractError("cannot open " + path + " for writing");
    out << "subject_id,age,filename\n";
    for (const auto& e : entries) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f", e.age);
        out << e.subject_id << "," << buf << "," << e.filename << "\n";
    }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ContractError("cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    if (!std::getline(in, line)) throw ContractError(path + ": empty manifest");
    if (line != "subject_id,age,filename")
        throw ContractError(path + ": unexpected manifest header '" + line + "'");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string sid, age, file;
        if (!std::getline(ss, sid, ',') || !std::getline(ss, age, ',') ||
            !std::getline(ss, file))
            throw ContractError(path + ": malformed manifest row '" + line + "'");
        entries.push_back({std::stoll(sid), std::stod(age), file});
    }
    return entries;
}

}  // namespace ipldm
