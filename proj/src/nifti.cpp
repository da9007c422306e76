#include "cmda/nifti.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace cmda::nifti {

namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kMinVoxOffset = 348;
constexpr std::size_t kDefaultVoxOffset = 352;

// Field offsets within the 348-byte NIfTI-1 header.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;        // short dim[8]
constexpr std::size_t kOffDatatype = 70;   // short
constexpr std::size_t kOffBitpix = 72;     // short
constexpr std::size_t kOffPixdim = 76;     // float pixdim[8]
constexpr std::size_t kOffVoxOffset = 108; // float
constexpr std::size_t kOffSclSlope = 112;  // float
constexpr std::size_t kOffSclInter = 116;  // float
constexpr std::size_t kOffQformCode = 252; // short
constexpr std::size_t kOffQuaternB = 256;  // float b,c,d then qoffset x,y,z
constexpr std::size_t kOffQoffsetX = 268;
constexpr std::size_t kOffMagic = 344;     // char[4]

std::uint16_t load_u16(const std::uint8_t* p, bool swap) {
    std::uint16_t v;
    std::memcpy(&v, p, 2);
    return swap ? std::uint16_t((v >> 8) | (v << 8)) : v;
}

std::int16_t load_i16(const std::uint8_t* p, bool swap) {
    return static_cast<std::int16_t>(load_u16(p, swap));
}

std::uint32_t load_u32(const std::uint8_t* p, bool swap) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    if (swap) v = ((v >> 24) & 0xff) | ((v >> 8) & 0xff00) | ((v << 8) & 0xff0000) | (v << 24);
    return v;
}

std::int32_t load_i32(const std::uint8_t* p, bool swap) {
    return static_cast<std::int32_t>(load_u32(p, swap));
}

float load_f32(const std::uint8_t* p, bool swap) {
    return std::bit_cast<float>(load_u32(p, swap));
}

double load_f64(const std::uint8_t* p, bool swap) {
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    if (swap) {
        v = ((v >> 56) & 0xffULL) | ((v >> 40) & 0xff00ULL) | ((v >> 24) & 0xff0000ULL) |
            ((v >> 8) & 0xff000000ULL) | ((v << 8) & 0xff00000000ULL) |
            ((v << 24) & 0xff0000000000ULL) | ((v << 40) & 0xff000000000000ULL) | (v << 56);
    }
    return std::bit_cast<double>(v);
}

void store_i16(std::vector<std::uint8_t>& out, std::size_t off, std::int16_t v) {
    std::memcpy(out.data() + off, &v, 2);
}

void store_i32(std::vector<std::uint8_t>& out, std::size_t off, std::int32_t v) {
    std::memcpy(out.data() + off, &v, 4);
}

void store_f32(std::vector<std::uint8_t>& out, std::size_t off, float v) {
    std::memcpy(out.data() + off, &v, 4);
}

std::size_t element_size(DataType t) {
    switch (t) {
        case DataType::kU8: return 1;
        case DataType::kI16: return 2;
        case DataType::kF32: return 4;
        case DataType::kF64: return 8;
    }
    return 0;
}

}  // namespace

Image parse(std::span<const std::uint8_t> bytes) {
    static_assert(std::endian::native == std::endian::little,
                  "parser assumes a little-endian host");
    if (bytes.size() < kHeaderSize)
        throw TruncationError("input shorter than the 348-byte NIfTI-1 header");

    const std::uint8_t* h = bytes.data();

    const char* magic = reinterpret_cast<const char*>(h + kOffMagic);
    const bool single_file = std::memcmp(magic, "n+1\0", 4) == 0;
    const bool pair_file = std::memcmp(magic, "ni1\0", 4) == 0;
    if (!single_file && !pair_file)
        throw FormatError("bad NIfTI magic (expected \"n+1\" or \"ni1\")");

    // Endianness: dim[0] must land in [1,7] in exactly one byte order.
    bool swap = false;
    std::int16_t ndim = load_i16(h + kOffDim, false);
    if (ndim < 1 || ndim > 7) {
        swap = true;
        ndim = load_i16(h + kOffDim, true);
        if (ndim < 1 || ndim > 7)
            throw FormatError("dim[0] outside [1,7] in either byte order");
    }

    if (load_i32(h + kOffSizeofHdr, swap) != 348)
        throw FormatError("sizeof_hdr != 348");

    int dims[8] = {ndim, 1, 1, 1, 1, 1, 1, 1};
    for (int i = 1; i <= 7; ++i)
        dims[i] = load_i16(h + kOffDim + 2 * static_cast<std::size_t>(i), swap);
    for (int i = 1; i <= std::min<int>(ndim, 3); ++i)
        if (dims[i] < 1) throw FormatError("spatial dim < 1");
    for (int i = 4; i <= ndim; ++i)
        if (dims[i] > 1)
            throw UnsupportedError("multi-frame images (dim[4..] > 1) are not supported");

    const int nx = dims[1];
    const int ny = ndim >= 2 ? dims[2] : 1;
    const int nz = ndim >= 3 ? dims[3] : 1;
    const std::size_t nvox = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
                             static_cast<std::size_t>(nz);
    if (nvox > (std::size_t(1) << 31))
        throw UnsupportedError("volume larger than 2^31 voxels");

    const std::int16_t dt_code = load_i16(h + kOffDatatype, swap);
    DataType dt;
    switch (dt_code) {
        case 2: dt = DataType::kU8; break;
        case 4: dt = DataType::kI16; break;
        case 16: dt = DataType::kF32; break;
        case 64: dt = DataType::kF64; break;
        default:
            throw UnsupportedError("unsupported datatype code " + std::to_string(dt_code));
    }

    Spacing spacing;
    const float px = load_f32(h + kOffPixdim + 4, swap);
    const float py = load_f32(h + kOffPixdim + 8, swap);
    const float pz = load_f32(h + kOffPixdim + 12, swap);
    auto check_spacing = [](float v, int used) -> float {
        if (!used) return 1.0f;
        if (!std::isfinite(v) || v <= 0.0f)
            throw FormatError("pixdim must be positive and finite");
        return v;
    };
    spacing.x = check_spacing(px, 1);
    spacing.y = check_spacing(py, ndim >= 2);
    spacing.z = check_spacing(pz, ndim >= 3);

    const float vox_offset_f = load_f32(h + kOffVoxOffset, swap);
    if (!std::isfinite(vox_offset_f) || vox_offset_f < static_cast<float>(kMinVoxOffset)) {
        // "ni1" with an out-of-file offset is the two-file layout, which we
        // do not read; a self-contained offset works the same as "n+1".
        if (pair_file)
            throw UnsupportedError("two-file (.hdr/.img) layout is not supported");
        throw FormatError("vox_offset below end of header");
    }
    const std::size_t vox_offset = static_cast<std::size_t>(vox_offset_f);
    if (vox_offset > bytes.size())
        throw TruncationError("vox_offset beyond end of input");

    float slope = load_f32(h + kOffSclSlope, swap);
    float inter = load_f32(h + kOffSclInter, swap);
    if (!std::isfinite(slope) || !std::isfinite(inter))
        throw FormatError("non-finite scl_slope/scl_inter");
    if (slope == 0.0f) slope = 1.0f;

    Origin origin;
    if (load_i16(h + kOffQformCode, swap) > 0) {
        origin.x = load_f32(h + kOffQoffsetX, swap);
        origin.y = load_f32(h + kOffQoffsetX + 4, swap);
        origin.z = load_f32(h + kOffQoffsetX + 8, swap);
        if (!std::isfinite(origin.x) || !std::isfinite(origin.y) || !std::isfinite(origin.z))
            throw FormatError("non-finite qoffset");
    }

    const std::size_t elsize = element_size(dt);
    if (bytes.size() - vox_offset < nvox * elsize)
        throw TruncationError("payload holds fewer samples than dim[] promises");

    Image img;
    img.nx = nx;
    img.ny = ny;
    img.nz = nz;
    img.spacing = spacing;
    img.origin = origin;
    img.source_type = dt;
    img.values.resize(nvox);

    const std::uint8_t* d = bytes.data() + vox_offset;
    const bool identity_scale = slope == 1.0f && inter == 0.0f;
    for (std::size_t i = 0; i < nvox; ++i) {
        double raw;
        switch (dt) {
            case DataType::kU8: raw = d[i]; break;
            case DataType::kI16: raw = load_i16(d + 2 * i, swap); break;
            case DataType::kF32: raw = load_f32(d + 4 * i, swap); break;
            case DataType::kF64: raw = load_f64(d + 8 * i, swap); break;
            default: raw = 0; break;
        }
        // Keep f32 payloads bit-exact when no scaling is requested.
        float v;
        if (identity_scale && dt == DataType::kF32)
            v = static_cast<float>(raw);
        else
            v = static_cast<float>(static_cast<double>(slope) * raw + static_cast<double>(inter));
        if (!std::isfinite(v)) throw FormatError("non-finite voxel value after scaling");
        img.values[i] = v;
    }
    return img;
}

Volume3D read_volume(std::span<const std::uint8_t> bytes) {
    Image img = parse(bytes);
    Volume3D vol(img.nx, img.ny, img.nz, img.spacing, img.origin);
    vol.voxels() = std::move(img.values);
    return vol;
}

LabelVolume read_labels(std::span<const std::uint8_t> bytes) {
    Image img = parse(bytes);
    LabelVolume lab(img.nx, img.ny, img.nz, img.spacing, img.origin);
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const float v = img.values[i];
        const float r = std::round(v);
        if (std::abs(v - r) > 1e-3f || r < 0.0f || r >= LabelVolume::kNumClasses)
            throw FormatError("label volume contains a value outside {0,1,2}");
        lab.labels()[i] = static_cast<std::uint8_t>(r);
    }
    return lab;
}

namespace {

std::vector<std::uint8_t> make_header(int nx, int ny, int nz, Spacing sp, Origin og,
                                      DataType dt, std::size_t payload_bytes) {
    std::vector<std::uint8_t> out(kDefaultVoxOffset + payload_bytes, 0);
    store_i32(out, kOffSizeofHdr, 348);
    store_i16(out, kOffDim, 3);
    store_i16(out, kOffDim + 2, static_cast<std::int16_t>(nx));
    store_i16(out, kOffDim + 4, static_cast<std::int16_t>(ny));
    store_i16(out, kOffDim + 6, static_cast<std::int16_t>(nz));
    for (int i = 4; i <= 7; ++i) store_i16(out, kOffDim + 2 * static_cast<std::size_t>(i), 1);
    store_i16(out, kOffDatatype, static_cast<std::int16_t>(dt));
    store_i16(out, kOffBitpix, static_cast<std::int16_t>(element_size(dt) * 8));
    store_f32(out, kOffPixdim, 1.0f);  // qfac
    store_f32(out, kOffPixdim + 4, sp.x);
    store_f32(out, kOffPixdim + 8, sp.y);
    store_f32(out, kOffPixdim + 12, sp.z);
    store_f32(out, kOffVoxOffset, static_cast<float>(kDefaultVoxOffset));
    store_f32(out, kOffSclSlope, 1.0f);
    store_f32(out, kOffSclInter, 0.0f);
    store_i16(out, kOffQformCode, 1);  // identity quaternion, qoffset = origin
    store_f32(out, kOffQuaternB, 0.0f);
    store_f32(out, kOffQuaternB + 4, 0.0f);
    store_f32(out, kOffQuaternB + 8, 0.0f);
    store_f32(out, kOffQoffsetX, og.x);
    store_f32(out, kOffQoffsetX + 4, og.y);
    store_f32(out, kOffQoffsetX + 8, og.z);
    std::memcpy(out.data() + kOffMagic, "n+1\0", 4);
    // bytes 348..351 stay zero: no header extensions
    return out;
}

}  // namespace

std::vector<std::uint8_t> write_volume(const Volume3D& vol) {
    if (vol.nx() > 0x7fff || vol.ny() > 0x7fff || vol.nz() > 0x7fff)
        throw ValidationError("dims exceed NIfTI-1 short range");
    vol.validate();
    auto out = make_header(vol.nx(), vol.ny(), vol.nz(), vol.spacing(), vol.origin(),
                           DataType::kF32, vol.numel() * 4);
    std::memcpy(out.data() + kDefaultVoxOffset, vol.voxels().data(), vol.numel() * 4);
    return out;
}

std::vector<std::uint8_t> write_labels(const LabelVolume& labels) {
    if (labels.nx() > 0x7fff || labels.ny() > 0x7fff || labels.nz() > 0x7fff)
        throw ValidationError("dims exceed NIfTI-1 short range");
    labels.validate();
    auto out = make_header(labels.nx(), labels.ny(), labels.nz(), labels.spacing(),
                           labels.origin(), DataType::kU8, labels.numel());
    std::memcpy(out.data() + kDefaultVoxOffset, labels.labels().data(), labels.numel());
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("read failed for " + path.string());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

Volume3D read_volume_file(const std::filesystem::path& path) {
    return read_volume(read_file_bytes(path));
}

LabelVolume read_labels_file(const std::filesystem::path& path) {
    return read_labels(read_file_bytes(path));
}

void write_volume_file(const std::filesystem::path& path, const Volume3D& vol) {
    write_file_bytes(path, write_volume(vol));
}

void write_labels_file(const std::filesystem::path& path, const LabelVolume& labels) {
    write_file_bytes(path, write_labels(labels));
}

}  // namespace cmda::nifti
