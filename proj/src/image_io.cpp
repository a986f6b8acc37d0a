#include "edge/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <vector>

#include "edge/error.hpp"

namespace edge {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors by longjmp; the handler records the message and jumps
// back to the setjmp point in the caller, which converts it to an exception.
struct PngErrorState {
  std::string message;
};

void png_error_fn(png_structp png, png_const_charp msg) {
  static_cast<PngErrorState*>(png_get_error_ptr(png))->message = msg;
  png_longjmp(png, 1);
}
void png_warning_fn(png_structp, png_const_charp) {}

}  // namespace

Tensor read_png(const std::string& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open image '" + path + "'");
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw DataError("'" + path + "' is not a PNG file");
  }
  PngErrorState err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* p;
    png_infop* i;
    ~Cleanup() { png_destroy_read_struct(p, i, nullptr); }
  } cleanup{&png, &info};
  // Everything with a destructor lives before setjmp so a jump back never
  // skips one.
  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  int w = 0, h = 0, channels = 0, out_depth = 0;
  if (setjmp(png_jmpbuf(png))) throw DataError("'" + path + "': png: " + err.message);

  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  w = static_cast<int>(png_get_image_width(png, info));
  h = static_cast<int>(png_get_image_height(png, info));
  channels = png_get_channels(png, info);
  out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * h);
  rows.resize(h);
  for (int i = 0; i < h; ++i) rows[i] = buffer.data() + rowbytes * i;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  Tensor out(Shape{channels, h, w});
  auto data = out.data();
  const double maxv = out_depth == 16 ? 65535.0 : 255.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int c = 0; c < channels; ++c) {
        const std::size_t idx = static_cast<std::size_t>(j) * channels + c;
        unsigned v;
        if (out_depth == 16) {
          const unsigned char* p = rows[i] + 2 * idx;  // big-endian samples
          v = (static_cast<unsigned>(p[0]) << 8) | static_cast<unsigned>(p[1]);
        } else {
          v = rows[i][idx];
        }
        data[(static_cast<std::size_t>(c) * h + i) * w + j] = static_cast<float>(v / maxv);
      }
    }
  }
  return out;
}

Tensor read_png_rgb(const std::string& path) {
  Tensor img = read_png(path);
  if (img.dim(0) == 3) return img;
  const int h = img.dim(1), w = img.dim(2);
  Tensor out(Shape{3, h, w});
  for (int c = 0; c < 3; ++c)
    std::copy(img.data().begin(), img.data().begin() + static_cast<std::ptrdiff_t>(h) * w,
              out.data().begin() + static_cast<std::ptrdiff_t>(c) * h * w);
  return out;
}

Tensor read_png_gray(const std::string& path) {
  Tensor img = read_png(path);
  if (img.dim(0) == 1) return img;
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor out(Shape{1, h, w});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) s += img.at(ch, i, j);
      out.at(0, i, j) = static_cast<float>(s / c);
    }
  return out;
}

void write_png(const std::string& path, const Tensor& image, int bit_depth) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_png expects 1×H×W or 3×H×W, got " + shape_str(image.shape()));
  }
  if (bit_depth != 8 && bit_depth != 16) throw ContractError("write_png: bit depth must be 8 or 16");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw DataError("cannot open '" + path + "' for writing");
  PngErrorState err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png_create_info_struct(png);
  struct Cleanup {
    png_structp* p;
    png_infop* i;
    ~Cleanup() { png_destroy_write_struct(p, i); }
  } cleanup{&png, &info};
  const int bytes = bit_depth / 8;
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * c * bytes);
  if (setjmp(png_jmpbuf(png))) throw DataError("'" + path + "': png: " + err.message);
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, bit_depth, c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const double maxv = bit_depth == 16 ? 65535.0 : 255.0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j)
      for (int ch = 0; ch < c; ++ch) {
        const double v = std::clamp(static_cast<double>(image.at(ch, i, j)), 0.0, 1.0);
        const auto q = static_cast<unsigned>(std::lround(v * maxv));
        unsigned char* p = row.data() + (static_cast<std::size_t>(j) * c + ch) * bytes;
        if (bytes == 2) {
          p[0] = static_cast<unsigned char>(q >> 8);  // PNG is big-endian
          p[1] = static_cast<unsigned char>(q & 0xff);
        } else {
          p[0] = static_cast<unsigned char>(q);
        }
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
}

}  // namespace edge
