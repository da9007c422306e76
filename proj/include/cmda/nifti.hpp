#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cmda/volume.hpp"

namespace cmda::nifti {

// Supported NIfTI-1 datatype codes.
enum class DataType : std::int16_t {
    kU8 = 2,
    kI16 = 4,
    kF32 = 16,
    kF64 = 64,
};

// Uncompressed single-file NIfTI-1 subset: 348-byte header, data at
// vox_offset, datatypes u8/i16/f32/f64, automatic endian detection via
// dim[0]. Orientation is ignored; qoffset_* is used as the origin when
// qform_code > 0. Values returned are scl_slope*raw + scl_inter with
// slope 0 treated as 1.
struct Image {
    int nx = 1, ny = 1, nz = 1;
    Spacing spacing;
    Origin origin;
    DataType source_type = DataType::kF32;
    std::vector<float> values;  // nx*ny*nz, x fastest
};

Image parse(std::span<const std::uint8_t> bytes);

Volume3D read_volume(std::span<const std::uint8_t> bytes);
// Additionally checks every value is an integer in {0,1,2}.
LabelVolume read_labels(std::span<const std::uint8_t> bytes);

// Emits datatype 16 (f32), little-endian, vox_offset 352, scl 1/0.
std::vector<std::uint8_t> write_volume(const Volume3D& vol);
// Emits datatype 2 (u8).
std::vector<std::uint8_t> write_labels(const LabelVolume& labels);

Volume3D read_volume_file(const std::filesystem::path& path);
LabelVolume read_labels_file(const std::filesystem::path& path);
void write_volume_file(const std::filesystem::path& path, const Volume3D& vol);
void write_labels_file(const std::filesystem::path& path, const LabelVolume& labels);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace cmda::nifti
