#pragma once

#include "fse/types.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fse {

// 8-bit RGB PNG <-> ImageTensor [1, 3, H, W]; pixel p maps to p / 127.5 - 1.
// Encoding rounds (x + 1) * 127.5 to the nearest integer after clamping to [-1, 1].
std::vector<uint8_t> encode_png(const ImageTensor& image);
ImageTensor decode_png(const std::vector<uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_png(const std::filesystem::path& path);

// Rounds an image through the 8-bit representation without touching disk.
ImageTensor quantize_8bit(const ImageTensor& image);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);

}  // namespace fse
