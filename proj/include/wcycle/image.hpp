#pragma once

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

#include "wcycle/tensor.hpp"

namespace wcycle {

// CHW float image with values in [-1, 1].
struct Image {
  int c = 0, h = 0, w = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c_, int h_, int w_, float fill = 0.f)
      : c(c_), h(h_), w(w_), data(static_cast<size_t>(c_) * h_ * w_, fill) {}

  float& at(int ci, int y, int x) { return data[(static_cast<size_t>(ci) * h + y) * w + x]; }
  float at(int ci, int y, int x) const {
    return data[(static_cast<size_t>(ci) * h + y) * w + x];
  }
  long size() const { return static_cast<long>(c) * h * w; }
};

inline double image_mse(const Image& a, const Image& b) {
  require(a.c == b.c && a.h == b.h && a.w == b.w, "image_mse: shape mismatch");
  double acc = 0;
  for (long i = 0; i < a.size(); ++i) {
    double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / a.size();
}

inline double image_max_absdiff(const Image& a, const Image& b) {
  require(a.c == b.c && a.h == b.h && a.w == b.w, "image_max_absdiff: shape mismatch");
  double m = 0;
  for (long i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.data[i]) - b.data[i]));
  return m;
}

template <typename T>
Var<T> image_to_var(const Image& img, bool requires_grad = false) {
  std::vector<T> v(img.data.begin(), img.data.end());
  return Var<T>::from_values({1, img.c, img.h, img.w}, std::move(v), requires_grad);
}

template <typename T>
Var<T> images_to_var(const std::vector<Image>& imgs) {
  require(!imgs.empty(), "images_to_var: empty batch");
  int c = imgs[0].c, h = imgs[0].h, w = imgs[0].w;
  std::vector<T> v;
  v.reserve(static_cast<size_t>(imgs.size()) * c * h * w);
  for (const auto& im : imgs) {
    require(im.c == c && im.h == h && im.w == w, "images_to_var: mixed shapes");
    v.insert(v.end(), im.data.begin(), im.data.end());
  }
  return Var<T>::from_values({static_cast<int>(imgs.size()), c, h, w}, std::move(v));
}

template <typename T>
Image var_to_image(const Var<T>& v, int batch_index = 0) {
  const auto& s = v.shape();
  require(s.size() == 4, "var_to_image: need 4-d tensor");
  Image img(s[1], s[2], s[3]);
  long per = img.size();
  for (long i = 0; i < per; ++i)
    img.data[i] = static_cast<float>(v.val()[batch_index * per + i]);
  return img;
}

inline Image resize_bilinear(const Image& src, int h, int w) {
  if (src.h == h && src.w == w) return src;
  Image dst(src.c, h, w);
  for (int ci = 0; ci < src.c; ++ci)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float sy = (y + 0.5f) * src.h / h - 0.5f;
        float sx = (x + 0.5f) * src.w / w - 0.5f;
        int y0 = std::max(0, std::min(src.h - 1, static_cast<int>(std::floor(sy))));
        int x0 = std::max(0, std::min(src.w - 1, static_cast<int>(std::floor(sx))));
        int y1 = std::min(src.h - 1, y0 + 1), x1 = std::min(src.w - 1, x0 + 1);
        float fy = std::min(1.f, std::max(0.f, sy - y0));
        float fx = std::min(1.f, std::max(0.f, sx - x0));
        float v00 = src.at(ci, y0, x0), v01 = src.at(ci, y0, x1);
        float v10 = src.at(ci, y1, x0), v11 = src.at(ci, y1, x1);
        dst.at(ci, y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                           fy * ((1 - fx) * v10 + fx * v11);
      }
  return dst;
}

// side-by-side grid, row-major order, for contact sheets
inline Image image_grid(const std::vector<Image>& imgs, int cols, int padding = 2) {
  require(!imgs.empty(), "image_grid: empty");
  int c = imgs[0].c, h = imgs[0].h, w = imgs[0].w;
  int rows = (static_cast<int>(imgs.size()) + cols - 1) / cols;
  Image out(c, rows * (h + padding) - padding, cols * (w + padding) - padding, -1.f);
  for (size_t i = 0; i < imgs.size(); ++i) {
    int r = static_cast<int>(i) / cols, col = static_cast<int>(i) % cols;
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          out.at(ci, r * (h + padding) + y, col * (w + padding) + x) = imgs[i].at(ci, y, x);
  }
  return out;
}

inline void write_png(const std::string& path, const Image& img) {
  require(img.c == 1 || img.c == 3, "write_png: need 1 or 3 channels");
  FILE* fp = std::fopen(path.c_str(), "wb");
  require(fp != nullptr, "write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("write_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(img.w) * img.c);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x)
      for (int ci = 0; ci < img.c; ++ci) {
        float v = (img.at(ci, y, x) + 1.f) * 0.5f;
        v = std::min(1.f, std::max(0.f, v));
        row[static_cast<size_t>(x) * img.c + ci] =
            static_cast<png_byte>(std::lround(v * 255.f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

// Throws on unreadable or non-PNG input; callers that scan folders catch
// and skip. Output is RGB in [-1, 1].
inline Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  require(fp != nullptr, "read_png: cannot open " + path);
  png_byte header[8];
  if (std::fread(header, 1, 8, fp) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    std::fclose(fp);
    throw std::runtime_error("read_png: not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw std::runtime_error("read_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  int w = static_cast<int>(png_get_image_width(png, info));
  int h = static_cast<int>(png_get_image_height(png, info));
  std::vector<png_byte> buf(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = buf.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  Image img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ci = 0; ci < 3; ++ci)
        img.at(ci, y, x) = buf[(static_cast<size_t>(y) * w + x) * 3 + ci] / 127.5f - 1.f;
  return img;
}

}  // namespace wcycle
