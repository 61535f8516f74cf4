#include "fse/image_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>

namespace fse {

namespace {

struct ReadCursor {
  const std::vector<uint8_t>* bytes;
  size_t pos;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes->size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_cb(png_structp) {}

[[noreturn]] void png_error_cb(png_structp, png_const_charp msg) { throw IoError(std::string("png: ") + msg); }
void png_warning_cb(png_structp, png_const_charp) {}

torch::Tensor to_bytes_hwc(const ImageTensor& image) {
  auto t = image.tensor.detach().to(torch::kCPU, torch::kFloat64);
  if (t.dim() == 4) {
    if (t.size(0) != 1) throw ShapeError("encode_png expects a single image");
    t = t.squeeze(0);
  }
  if (t.dim() != 3 || t.size(0) != 3) throw ShapeError("encode_png expects a [3, H, W] image");
  auto q = torch::round((t.clamp(-1.0, 1.0) + 1.0) * 127.5).clamp(0, 255).to(torch::kUInt8);
  return q.permute({1, 2, 0}).contiguous();
}

}  // namespace

std::vector<uint8_t> encode_png(const ImageTensor& image) {
  const auto hwc = to_bytes_hwc(image);
  const auto h = static_cast<png_uint_32>(hwc.size(0));
  const auto w = static_cast<png_uint_32>(hwc.size(1));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<uint8_t> out;
  try {
    png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
    png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const auto* base = hwc.data_ptr<uint8_t>();
    for (png_uint_32 y = 0; y < h; ++y) {
      png_write_row(png, const_cast<png_bytep>(base + static_cast<size_t>(y) * w * 3));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

ImageTensor decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("not a PNG image");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_cb, png_warning_cb);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{&bytes, 0};
  torch::Tensor hwc;
  try {
    png_set_read_fn(png, &cur, png_read_cb);
    png_read_info(png, info);
    const auto w = png_get_image_width(png, info);
    const auto h = png_get_image_height(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (depth == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
      if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
      png_set_gray_to_rgb(png);
    }
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<size_t>(w) * 3) throw IoError("unsupported PNG layout");
    hwc = torch::empty({static_cast<int64_t>(h), static_cast<int64_t>(w), 3}, torch::kUInt8);
    auto* base = hwc.data_ptr<uint8_t>();
    for (png_uint_32 y = 0; y < h; ++y) png_read_row(png, base + static_cast<size_t>(y) * w * 3, nullptr);
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  auto chw = hwc.permute({2, 0, 1}).to(torch::kFloat32) / 127.5 - 1.0;
  return {chw.unsqueeze(0).contiguous()};
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  write_file_atomic(path, encode_png(image));
}

ImageTensor read_png(const std::filesystem::path& path) { return decode_png(read_file(path)); }

ImageTensor quantize_8bit(const ImageTensor& image) {
  auto t = image.tensor.detach();
  auto q = torch::round((t.clamp(-1.0, 1.0).to(torch::kFloat64) + 1.0) * 127.5);
  return {(q.to(torch::kFloat32) / 127.5 - 1.0).to(t.dtype())};
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".part");
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace fse
