#pragma once

#include <filesystem>

#include "cfseg/volume.hpp"

namespace cfseg {

/// NIfTI-1 single-file (.nii, or .nii.gz when the path ends in ".gz").
/// Readers honour dim[1..3], pixdim[1..3], datatype and scl_slope/scl_inter.
/// Writers emit float32 for images, uint8 for labels, identity scaling.
ImageVolume read_image(const std::filesystem::path& path);
LabelVolume read_labels(const std::filesystem::path& path);

void write_volume(const ImageVolume& vol, const std::filesystem::path& path);
void write_volume(const LabelVolume& vol, const std::filesystem::path& path);

inline constexpr std::size_t kNiftiHeaderSize = 348;
inline constexpr std::size_t kNiftiDataOffset = 352;

}  // namespace cfseg
