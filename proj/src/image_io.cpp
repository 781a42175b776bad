#include "sps/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

namespace sps {

namespace {

constexpr char kFloatMagic[4] = {'S', 'P', 'S', 'F'};
constexpr std::uint32_t kFloatVersion = 1;
const char* kSupported = "supported formats: .png (8/16-bit), .pgm (P2/P5), .spsf (float container)";

std::string extension(const std::string& path) {
    const auto dot = path.find_last_of('.');
    if (dot == std::string::npos) {
        return "";
    }
    std::string ext = path.substr(dot + 1);
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext;
}

double luminance(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

Image load_png(const std::string& path) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
    if (!fp) {
        throw FormatError("cannot open " + path);
    }
    png_byte sig[8];
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw FormatError(path + " is not a PNG file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw FormatError("corrupt PNG: " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
    }
    if (depth == 16) {
        png_set_swap(png); // little-endian samples in memory
    }
    png_read_update_info(png, info);
    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    const int bits = png_get_bit_depth(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<png_byte> buffer(rowbytes * static_cast<std::size_t>(height));
    std::vector<png_bytep> rows(height);
    for (int y = 0; y < height; ++y) {
        rows[y] = buffer.data() + rowbytes * y;
    }
    png_read_image(png, rows.data());
    png_destroy_read_struct(&png, &info, nullptr);

    const double peak = bits == 16 ? 65535.0 : 255.0;
    auto sample = [&](int y, int x, int c) -> double {
        const png_bytep row = rows[y];
        if (bits == 16) {
            std::uint16_t v;
            std::memcpy(&v, row + 2 * (static_cast<std::size_t>(x) * channels + c), 2);
            return v / peak;
        }
        return row[static_cast<std::size_t>(x) * channels + c] / peak;
    };
    Image img(height, width);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            // gray, gray+alpha, rgb, rgba
            img(y, x) = channels >= 3 ? luminance(sample(y, x, 0), sample(y, x, 1), sample(y, x, 2)) : sample(y, x, 0);
        }
    }
    return img;
}

Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path);
    }
    auto token = [&]() {
        std::string t;
        char c;
        while (in.get(c)) {
            if (c == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!t.empty()) {
                    break;
                }
                continue;
            }
            t.push_back(c);
        }
        return t;
    };
    const std::string magic = token();
    if (magic != "P2" && magic != "P5") {
        throw FormatError(path + ": only grayscale PGM (P2/P5) is supported");
    }
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(token());
        height = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw FormatError(path + ": malformed PGM header");
    }
    if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) {
        throw FormatError(path + ": malformed PGM header");
    }
    Image img(height, width);
    for (Eigen::Index i = 0; i < img.data.size(); ++i) {
        double v = 0.0;
        if (magic == "P2") {
            const std::string t = token();
            if (t.empty()) {
                throw FormatError(path + ": truncated PGM data");
            }
            v = std::stod(t);
        } else if (maxval < 256) {
            char c;
            if (!in.get(c)) {
                throw FormatError(path + ": truncated PGM data");
            }
            v = static_cast<unsigned char>(c);
        } else {
            unsigned char b[2];
            if (!in.read(reinterpret_cast<char*>(b), 2)) {
                throw FormatError(path + ": truncated PGM data");
            }
            v = (b[0] << 8) | b[1];
        }
        img.data[i] = v / maxval;
    }
    return img;
}

} // namespace

bool is_supported_image(const std::string& path) {
    const std::string ext = extension(path);
    return ext == "png" || ext == "pgm" || ext == "spsf";
}

Image load_image(const std::string& path) {
    const std::string ext = extension(path);
    if (ext == "png") {
        return load_png(path);
    }
    if (ext == "pgm") {
        return load_pgm(path);
    }
    if (ext == "spsf") {
        auto channels = load_float_container(path);
        if (channels.size() != 1) {
            throw FormatError(path + ": expected a single-channel float container");
        }
        return std::move(channels.front());
    }
    throw FormatError("unsupported image '" + path + "'; " + kSupported);
}

void save_png(const std::string& path, const Image& img) {
    std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) {
        throw FormatError("cannot write " + path);
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("libpng initialization failed");
    }
    std::vector<png_byte> buffer(static_cast<std::size_t>(img.pixels()));
    for (Eigen::Index i = 0; i < img.data.size(); ++i) {
        const double v = std::isfinite(img.data[i]) ? std::clamp(img.data[i], 0.0, 1.0) : 0.0;
        buffer[i] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) {
        rows[y] = buffer.data() + static_cast<std::size_t>(y) * img.width;
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw FormatError("failed writing PNG " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

void save_float_container(const std::string& path, const std::vector<Image>& channels) {
    if (channels.empty()) {
        throw InputError("float container needs at least one channel");
    }
    for (const auto& c : channels) {
        require_same_shape(channels.front(), c, "save_float_container");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write " + path);
    }
    const std::uint32_t header[4] = {kFloatVersion, static_cast<std::uint32_t>(channels.size()),
                                     static_cast<std::uint32_t>(channels.front().height),
                                     static_cast<std::uint32_t>(channels.front().width)};
    out.write(kFloatMagic, 4);
    out.write(reinterpret_cast<const char*>(header), sizeof(header));
    for (const auto& c : channels) {
        out.write(reinterpret_cast<const char*>(c.data.data()), static_cast<std::streamsize>(c.data.size() * 8));
    }
    if (!out) {
        throw FormatError("failed writing " + path);
    }
}

std::vector<Image> load_float_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path);
    }
    char magic[4];
    std::uint32_t header[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kFloatMagic, 4) != 0 ||
        !in.read(reinterpret_cast<char*>(header), sizeof(header))) {
        throw FormatError(path + " is not a float container");
    }
    if (header[0] != kFloatVersion) {
        throw FormatError(path + ": unsupported container version " + std::to_string(header[0]));
    }
    const int c = static_cast<int>(header[1]), h = static_cast<int>(header[2]), w = static_cast<int>(header[3]);
    if (c < 1 || h < 1 || w < 1 || c > 4096 || static_cast<long long>(h) * w > (1LL << 30)) {
        throw FormatError(path + ": bad container dimensions");
    }
    std::vector<Image> channels;
    for (int i = 0; i < c; ++i) {
        Image img(h, w);
        if (!in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size() * 8))) {
            throw FormatError(path + ": truncated float container");
        }
        channels.push_back(std::move(img));
    }
    return channels;
}

void save_image(const std::string& path, const Image& img) {
    const std::string ext = extension(path);
    if (ext == "spsf") {
        save_float_container(path, {img});
    } else if (ext == "png") {
        save_png(path, img);
    } else {
        throw FormatError("cannot write '" + path + "'; output must be .png or .spsf");
    }
}

} // namespace sps
