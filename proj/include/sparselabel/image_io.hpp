#pragma once

#include <filesystem>
#include <vector>

#include "sparselabel/grid.hpp"

namespace sparselabel {

/// Reads an 8/16-bit PNG (gray, gray+alpha, RGB, RGBA, paletted) or a binary
/// PGM/PPM. Values are scaled to [0, 1]; alpha is discarded, palettes expanded.
ImageGrid read_image(const std::filesystem::path& path);

/// Reads a label map whose pixel values are class indices (paletted PNG index
/// or gray level) and returns a one-hot grid with `classes` channels.
ImageGrid read_label_indexed(const std::filesystem::path& path, int classes);

/// One grayscale file per label channel; a pixel is on when its value > 0.5.
ImageGrid read_label_channels(const std::vector<std::filesystem::path>& paths);

/// 8-bit PNG after clamping to [0, 1] and scaling to [0, 255]. Grids with 1
/// or 3 channels are written as gray or RGB; other channel counts are rejected.
void write_png(const std::filesystem::path& path, const ImageGrid& grid);

/// Binary PGM (1 channel) or PPM (3 channels), 8-bit.
void write_pnm(const std::filesystem::path& path, const ImageGrid& grid);

/// Raw float dump: "SLF4", u32 width, u32 height, u32 channels, then
/// little-endian f32 values in ImageGrid order.
void write_raw_f32(const std::filesystem::path& path, const ImageGrid& grid);
ImageGrid read_raw_f32(const std::filesystem::path& path);

}  // namespace sparselabel
