#include "sparselabel/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

#include "sparselabel/binary_io.hpp"

namespace sparselabel {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

struct PngPixels {
  int width = 0;
  int height = 0;
  int channels = 0;
  int max_value = 255;
  std::vector<std::uint16_t> values;
};

void png_error_handler(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }
void png_warning_handler(png_structp, png_const_charp) {}

// expand_palette=false keeps raw palette indices (label maps).
PngPixels read_png_pixels(const std::filesystem::path& path, bool expand_palette) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  if (!png) throw std::runtime_error("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  PngPixels out;
  if (color == PNG_COLOR_TYPE_PALETTE && expand_palette) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_PALETTE && !expand_palette && depth < 8) png_set_packing(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    if (expand_palette) {
      png_set_expand_gray_1_2_4_to_8(png);
    } else {
      png_set_packing(png);
    }
  }
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());

  const bool has_alpha = channels == 2 || channels == 4;
  out.channels = has_alpha ? channels - 1 : channels;
  if (color == PNG_COLOR_TYPE_PALETTE && !expand_palette) {
    out.max_value = 255;
  } else if (color == PNG_COLOR_TYPE_GRAY && depth < 8 && !expand_palette) {
    out.max_value = (1 << depth) - 1;
  } else {
    out.max_value = out_depth == 16 ? 65535 : 255;
  }
  out.values.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  std::size_t k = 0;
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < out.channels; ++c) {
        const std::size_t idx = static_cast<std::size_t>(x) * channels + c;
        if (out_depth == 16) {
          std::uint16_t v;
          std::memcpy(&v, rows[y] + 2 * idx, 2);
          out.values[k++] = v;
        } else {
          out.values[k++] = rows[y][idx];
        }
      }
    }
  }
  return out;
}

std::string read_pnm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

PngPixels read_pnm_pixels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string magic = read_pnm_token(in);
  if (magic != "P5" && magic != "P6") throw std::runtime_error("unsupported PNM variant in " + path.string());
  PngPixels out;
  out.channels = magic == "P5" ? 1 : 3;
  out.width = std::stoi(read_pnm_token(in));
  out.height = std::stoi(read_pnm_token(in));
  out.max_value = std::stoi(read_pnm_token(in));
  if (out.width <= 0 || out.height <= 0 || out.max_value <= 0 || out.max_value > 65535) {
    throw std::runtime_error("bad PNM header in " + path.string());
  }
  const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.values.resize(n);
  if (out.max_value < 256) {
    std::vector<unsigned char> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("truncated PNM " + path.string());
    std::copy(raw.begin(), raw.end(), out.values.begin());
  } else {
    std::vector<unsigned char> raw(2 * n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(2 * n));
    if (!in) throw std::runtime_error("truncated PNM " + path.string());
    for (std::size_t i = 0; i < n; ++i) out.values[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  }
  return out;
}

bool is_png(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in && png_sig_cmp(sig, 0, 8) == 0;
}

PngPixels read_pixels(const std::filesystem::path& path, bool expand_palette) {
  return is_png(path) ? read_png_pixels(path, expand_palette) : read_pnm_pixels(path);
}

std::uint8_t to_byte(double v) {
  if (!std::isfinite(v)) v = 0.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

ImageGrid read_image(const std::filesystem::path& path) {
  const PngPixels px = read_pixels(path, true);
  ImageGrid img(px.width, px.height, px.channels);
  const double scale = 1.0 / px.max_value;
  for (std::size_t i = 0; i < px.values.size(); ++i) img.data()[i] = px.values[i] * scale;
  return img;
}

ImageGrid read_label_indexed(const std::filesystem::path& path, int classes) {
  if (classes < 1) throw std::invalid_argument("label class count must be >= 1");
  const PngPixels px = read_pixels(path, false);
  if (px.channels != 1) throw std::runtime_error("indexed label map must be single-channel: " + path.string());
  ImageGrid out(px.width, px.height, classes);
  for (std::size_t p = 0; p < px.values.size(); ++p) {
    const int cls = px.values[p];
    if (cls >= classes) {
      throw std::runtime_error("label index " + std::to_string(cls) + " out of range in " + path.string());
    }
    out.data()[p * classes + cls] = 1.0;
  }
  return out;
}

ImageGrid read_label_channels(const std::vector<std::filesystem::path>& paths) {
  if (paths.empty()) throw std::invalid_argument("no label channel files given");
  ImageGrid out;
  for (std::size_t c = 0; c < paths.size(); ++c) {
    const ImageGrid ch = read_image(paths[c]);
    if (c == 0) out = ImageGrid(ch.width(), ch.height(), static_cast<int>(paths.size()));
    if (ch.width() != out.width() || ch.height() != out.height()) {
      throw std::runtime_error("label channel size mismatch: " + paths[c].string());
    }
    for (std::size_t p = 0; p < ch.pixel_count(); ++p) {
      // Colour inputs count as on when any channel is on.
      double v = 0.0;
      for (int k = 0; k < ch.channels(); ++k) v = std::max(v, ch.data()[p * ch.channels() + k]);
      out.data()[p * paths.size() + c] = v > 0.5 ? 1.0 : 0.0;
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageGrid& grid) {
  if (grid.channels() != 1 && grid.channels() != 3) {
    throw std::invalid_argument("write_png supports 1 or 3 channels, got " + std::to_string(grid.channels()));
  }
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
  if (!png) throw std::runtime_error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_set_IHDR(png, info, grid.width(), grid.height(), 8,
               grid.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<std::size_t>(grid.width()) * grid.channels());
  for (int y = 0; y < grid.height(); ++y) {
    for (int x = 0; x < grid.width(); ++x) {
      for (int c = 0; c < grid.channels(); ++c) row[x * grid.channels() + c] = to_byte(grid.at(x, y, c));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

void write_pnm(const std::filesystem::path& path, const ImageGrid& grid) {
  if (grid.channels() != 1 && grid.channels() != 3) {
    throw std::invalid_argument("write_pnm supports 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << (grid.channels() == 1 ? "P5" : "P6") << '\n' << grid.width() << ' ' << grid.height() << "\n255\n";
  for (double v : grid.data()) out.put(static_cast<char>(to_byte(v)));
}

void write_raw_f32(const std::filesystem::path& path, const ImageGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  binio::put_magic(out, "SLF4");
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.width()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.height()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(grid.channels()));
  for (double v : grid.data()) binio::put<float>(out, static_cast<float>(v));
}

ImageGrid read_raw_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  binio::expect_magic(in, "SLF4");
  const auto w = binio::get<std::uint32_t>(in);
  const auto h = binio::get<std::uint32_t>(in);
  const auto c = binio::get<std::uint32_t>(in);
  ImageGrid grid(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
  for (double& v : grid.data()) v = binio::get<float>(in);
  return grid;
}

}  // namespace sparselabel
