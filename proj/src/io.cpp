#include "ctarr/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include <zlib.h>

#include "ctarr/error.hpp"
#include "ctarr/log.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian and so is every supported target");

namespace ctarr {
namespace {

using nlohmann::json;

enum class Dtype { u8, i16, u16, f32 };

std::size_t dtype_size(Dtype d) {
    switch (d) {
        case Dtype::u8: return 1;
        case Dtype::i16:
        case Dtype::u16: return 2;
        case Dtype::f32: return 4;
    }
    return 0;
}

// Decoded payload of either on-disk format, before label/value conversion.
struct RawVolume {
    Grid grid;
    Dtype dtype = Dtype::u8;
    float slope = 1.0f;
    float inter = 0.0f;
    std::vector<std::uint8_t> bytes;
};

std::uint32_t payload_crc32(const std::vector<std::uint8_t>& bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    std::size_t off = 0;
    while (off < bytes.size()) {
        uInt chunk = uInt(std::min<std::size_t>(bytes.size() - off, 1u << 30));
        crc = crc32(crc, bytes.data() + off, chunk);
        off += chunk;
    }
    return std::uint32_t(crc);
}

Arr3d json_vec3(const json& j, const char* key, const std::string& path) {
    require(j.contains(key) && j[key].is_array() && j[key].size() == 3, errc::corrupt_file,
            "missing or malformed \"" + std::string(key) + "\" in header of " + path);
    return Arr3d(j[key][0].get<double>(), j[key][1].get<double>(), j[key][2].get<double>());
}

RawVolume read_native(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), errc::io_error, "cannot open " + path);
    std::string line;
    std::getline(is, line);
    require(is.good(), errc::corrupt_file, "missing header line in " + path);

    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        fail(errc::corrupt_file, "malformed header in " + path + ": " + e.what());
    }

    RawVolume raw;
    require(j.contains("dims") && j["dims"].is_array() && j["dims"].size() == 3,
            errc::corrupt_file, "missing or malformed \"dims\" in header of " + path);
    for (int a = 0; a < 3; ++a) raw.grid.dims[a] = j["dims"][a].get<int>();
    raw.grid.spacing_mm = json_vec3(j, "spacing_mm", path);
    raw.grid.origin_mm = json_vec3(j, "origin_mm", path);
    validate_grid(raw.grid);

    require(j.contains("dtype") && j["dtype"].is_string(), errc::corrupt_file,
            "missing \"dtype\" in header of " + path);
    std::string dtype = j["dtype"].get<std::string>();
    if (dtype == "u8")
        raw.dtype = Dtype::u8;
    else if (dtype == "f32")
        raw.dtype = Dtype::f32;
    else
        fail(errc::unsupported_datatype, "dtype \"" + dtype + "\" unsupported in " + path);
    require(j.contains("checksum_crc32"), errc::corrupt_file,
            "missing \"checksum_crc32\" in header of " + path);
    auto expected_crc = j["checksum_crc32"].get<std::uint32_t>();

    std::size_t n = std::size_t(raw.grid.num_voxels()) * dtype_size(raw.dtype);
    raw.bytes.resize(n);
    is.read(reinterpret_cast<char*>(raw.bytes.data()), std::streamsize(n));
    require(std::size_t(is.gcount()) == n, errc::truncated_payload,
            path + ": expected " + std::to_string(n) + " payload bytes, got " +
                std::to_string(is.gcount()));
    require(payload_crc32(raw.bytes) == expected_crc, errc::corrupt_file,
            "payload checksum mismatch in " + path);
    return raw;
}

// The on-disk NIfTI-1 header; all fields little-endian.
struct NiftiHeader {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1;
    float intent_p2;
    float intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max;
    float cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax;
    std::int32_t glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b;
    float quatern_c;
    float quatern_d;
    float qoffset_x;
    float qoffset_y;
    float qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(NiftiHeader) == 348);

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtUint16 = 512;

struct GzCloser {
    void operator()(gzFile_s* f) const {
        if (f) gzclose(f);
    }
};
using GzPtr = std::unique_ptr<gzFile_s, GzCloser>;

void gz_read_exact(gzFile f, void* buf, std::size_t n, const std::string& path) {
    int got = gzread(f, buf, unsigned(n));
    require(got >= 0 && std::size_t(got) == n, errc::truncated_payload,
            path + ": expected " + std::to_string(n) + " bytes, got " +
                std::to_string(std::max(got, 0)));
}

RawVolume read_nifti(const std::string& path) {
    GzPtr f(gzopen(path.c_str(), "rb"));
    require(f != nullptr, errc::io_error, "cannot open " + path);

    NiftiHeader h{};
    gz_read_exact(f.get(), &h, sizeof(h), path);
    require(h.sizeof_hdr == 348, errc::bad_magic, path + ": not a NIfTI-1 file");
    require(std::memcmp(h.magic, "n+1", 4) == 0, errc::bad_magic,
            path + ": unsupported NIfTI magic (only single-file \"n+1\" handled)");

    require(h.dim[0] >= 1 && h.dim[0] <= 7, errc::corrupt_file,
            path + ": dim[0]=" + std::to_string(h.dim[0]) + " out of range");
    for (int a = 4; a <= h.dim[0]; ++a)
        require(h.dim[a] <= 1, errc::unsupported_dimension,
                path + ": only 3D volumes supported, dim[" + std::to_string(a) +
                    "]=" + std::to_string(h.dim[a]));

    RawVolume raw;
    for (int a = 0; a < 3; ++a) {
        std::int16_t d = a < h.dim[0] ? h.dim[a + 1] : 1;
        require(d >= 1, errc::corrupt_file,
                path + ": dim[" + std::to_string(a + 1) + "]=" + std::to_string(d));
        raw.grid.dims[a] = d;
        float sp = a < h.dim[0] ? h.pixdim[a + 1] : 1.0f;
        require(sp > 0.0f && std::isfinite(sp), errc::corrupt_file,
                path + ": non-positive pixdim[" + std::to_string(a + 1) + "]");
        raw.grid.spacing_mm[a] = double(sp);
    }

    switch (h.datatype) {
        case kDtUint8: raw.dtype = Dtype::u8; break;
        case kDtInt16: raw.dtype = Dtype::i16; break;
        case kDtUint16: raw.dtype = Dtype::u16; break;
        case kDtFloat32: raw.dtype = Dtype::f32; break;
        default:
            fail(errc::unsupported_datatype,
                 path + ": NIfTI datatype code " + std::to_string(h.datatype) + " unsupported");
    }
    require(h.bitpix == std::int16_t(8 * dtype_size(raw.dtype)), errc::corrupt_file,
            path + ": bitpix " + std::to_string(h.bitpix) + " inconsistent with datatype");

    if (h.qform_code > 0) {
        raw.grid.origin_mm = Arr3d(h.qoffset_x, h.qoffset_y, h.qoffset_z);
        if (h.quatern_b != 0.0f || h.quatern_c != 0.0f || h.quatern_d != 0.0f)
            log::warn(path + ": qform rotation ignored, keeping spacing and offset only");
    } else if (h.sform_code > 0) {
        raw.grid.origin_mm = Arr3d(h.srow_x[3], h.srow_y[3], h.srow_z[3]);
    }
    if (h.sform_code > 0) {
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        bool diagonal = true;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                if (r != c && rows[r][c] != 0.0f) diagonal = false;
        if (!diagonal)
            log::warn(path + ": non-diagonal sform ignored, keeping spacing and offset only");
    }
    raw.slope = h.scl_slope;
    raw.inter = h.scl_inter;
    validate_grid(raw.grid);

    long long off = std::llround(double(h.vox_offset));
    require(off >= 348, errc::corrupt_file,
            path + ": vox_offset " + std::to_string(off) + " overlaps the header");
    for (long long skip = off - 348; skip > 0;) {
        char scratch[256];
        std::size_t n = std::size_t(std::min<long long>(skip, sizeof(scratch)));
        gz_read_exact(f.get(), scratch, n, path);
        skip -= (long long)n;
    }

    std::size_t n = std::size_t(raw.grid.num_voxels()) * dtype_size(raw.dtype);
    raw.bytes.resize(n);
    gz_read_exact(f.get(), raw.bytes.data(), n, path);
    return raw;
}

RawVolume read_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), errc::io_error, "cannot open " + path);
    unsigned char head[4] = {0, 0, 0, 0};
    is.read(reinterpret_cast<char*>(head), 4);
    require(is.gcount() >= 4, errc::bad_magic, path + ": file too short");
    is.close();

    if (head[0] == '{') return read_native(path);
    if (head[0] == 0x1f && head[1] == 0x8b) return read_nifti(path);
    std::int32_t first;
    std::memcpy(&first, head, 4);
    if (first == 348) return read_nifti(path);
    fail(errc::bad_magic, path + ": unrecognized format (not native, NIfTI-1, or gzip)");
}

bool has_scaling(const RawVolume& raw) {
    return raw.slope != 0.0f && (raw.slope != 1.0f || raw.inter != 0.0f);
}

template <class T>
const T* typed(const RawVolume& raw) {
    return reinterpret_cast<const T*>(raw.bytes.data());
}

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes, bool gz) {
    if (gz) {
        GzPtr f(gzopen(path.c_str(), "wb"));
        require(f != nullptr, errc::io_error, "cannot open " + path + " for writing");
        std::size_t off = 0;
        while (off < bytes.size()) {
            unsigned chunk = unsigned(std::min<std::size_t>(bytes.size() - off, 1u << 30));
            int wrote = gzwrite(f.get(), bytes.data() + off, chunk);
            require(wrote == int(chunk), errc::io_error, "short write to " + path);
            off += chunk;
        }
    } else {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        require(os.good(), errc::io_error, "cannot open " + path + " for writing");
        os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
        os.flush();
        require(os.good(), errc::io_error, "short write to " + path);
    }
}

void write_native(const Grid& grid, const char* dtype, const std::vector<std::uint8_t>& payload,
                  const std::string& path) {
    json j;
    j["dims"] = {grid.dims[0], grid.dims[1], grid.dims[2]};
    j["spacing_mm"] = {grid.spacing_mm[0], grid.spacing_mm[1], grid.spacing_mm[2]};
    j["origin_mm"] = {grid.origin_mm[0], grid.origin_mm[1], grid.origin_mm[2]};
    j["dtype"] = dtype;
    j["checksum_crc32"] = payload_crc32(payload);

    std::vector<std::uint8_t> bytes;
    std::string header = j.dump();
    header.push_back('\n');
    bytes.reserve(header.size() + payload.size());
    append_bytes(bytes, header.data(), header.size());
    append_bytes(bytes, payload.data(), payload.size());
    write_file(path, bytes, false);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_nifti(const Grid& grid, std::int16_t datatype, const std::vector<std::uint8_t>& payload,
                 const std::string& path) {
    NiftiHeader h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int a = 0; a < 3; ++a) {
        require(grid.dims[a] <= 32767, errc::invalid_argument,
                "dimension " + std::to_string(grid.dims[a]) + " exceeds the NIfTI-1 limit");
        h.dim[a + 1] = std::int16_t(grid.dims[a]);
    }
    for (int a = 4; a < 8; ++a) h.dim[a] = 1;
    h.datatype = datatype;
    h.bitpix = datatype == kDtUint8 ? 8 : 32;
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = float(grid.spacing_mm[a]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimetres
    std::strncpy(h.descrip, "ctarr", sizeof(h.descrip) - 1);
    h.qform_code = 1;
    h.sform_code = 1;
    h.qoffset_x = float(grid.origin_mm[0]);
    h.qoffset_y = float(grid.origin_mm[1]);
    h.qoffset_z = float(grid.origin_mm[2]);
    h.srow_x[0] = h.pixdim[1];
    h.srow_y[1] = h.pixdim[2];
    h.srow_z[2] = h.pixdim[3];
    h.srow_x[3] = h.qoffset_x;
    h.srow_y[3] = h.qoffset_y;
    h.srow_z[3] = h.qoffset_z;
    std::memcpy(h.magic, "n+1", 4);

    std::vector<std::uint8_t> bytes;
    bytes.reserve(352 + payload.size());
    append_bytes(bytes, &h, sizeof(h));
    std::uint8_t ext[4] = {0, 0, 0, 0};
    append_bytes(bytes, ext, 4);
    append_bytes(bytes, payload.data(), payload.size());
    write_file(path, bytes, ends_with(path, ".gz"));
}

}  // namespace

LabelVolume read_label_volume(const std::string& path, int num_classes) {
    RawVolume raw = read_raw(path);
    require(!has_scaling(raw), errc::invalid_argument,
            path + ": label volume carries intensity scaling (scl_slope/scl_inter)");

    std::int64_t n = raw.grid.num_voxels();
    std::vector<Label> labels(static_cast<std::size_t>(n));
    auto check_range = [&](double v, std::int64_t i) {
        require(v >= 0.0 && v <= double(num_classes), errc::invalid_argument,
                path + ": voxel " + std::to_string(i) + " has label " + std::to_string(v) +
                    " outside [0, " + std::to_string(num_classes) + "]");
    };
    switch (raw.dtype) {
        case Dtype::u8: {
            const auto* p = typed<std::uint8_t>(raw);
            for (std::int64_t i = 0; i < n; ++i) {
                check_range(double(p[i]), i);
                labels[std::size_t(i)] = p[i];
            }
            break;
        }
        case Dtype::i16: {
            const auto* p = typed<std::int16_t>(raw);
            for (std::int64_t i = 0; i < n; ++i) {
                check_range(double(p[i]), i);
                labels[std::size_t(i)] = Label(p[i]);
            }
            break;
        }
        case Dtype::u16: {
            const auto* p = typed<std::uint16_t>(raw);
            for (std::int64_t i = 0; i < n; ++i) {
                check_range(double(p[i]), i);
                labels[std::size_t(i)] = Label(p[i]);
            }
            break;
        }
        case Dtype::f32: {
            const auto* p = typed<float>(raw);
            for (std::int64_t i = 0; i < n; ++i) {
                float v = p[i];
                require(std::isfinite(v) && v == std::floor(v), errc::invalid_argument,
                        path + ": voxel " + std::to_string(i) + " value " + std::to_string(v) +
                            " is not an integer label");
                check_range(double(v), i);
                labels[std::size_t(i)] = Label(v);
            }
            break;
        }
    }
    return make_label_volume(raw.grid, num_classes, std::move(labels));
}

FloatVolume read_value_volume(const std::string& path) {
    RawVolume raw = read_raw(path);
    std::int64_t n = raw.grid.num_voxels();
    std::vector<float> values(static_cast<std::size_t>(n));
    switch (raw.dtype) {
        case Dtype::u8: {
            const auto* p = typed<std::uint8_t>(raw);
            for (std::int64_t i = 0; i < n; ++i) values[std::size_t(i)] = float(p[i]);
            break;
        }
        case Dtype::i16: {
            const auto* p = typed<std::int16_t>(raw);
            for (std::int64_t i = 0; i < n; ++i) values[std::size_t(i)] = float(p[i]);
            break;
        }
        case Dtype::u16: {
            const auto* p = typed<std::uint16_t>(raw);
            for (std::int64_t i = 0; i < n; ++i) values[std::size_t(i)] = float(p[i]);
            break;
        }
        case Dtype::f32: {
            const auto* p = typed<float>(raw);
            std::copy(p, p + n, values.begin());
            break;
        }
    }
    if (has_scaling(raw))
        for (float& v : values) v = raw.slope * v + raw.inter;
    return make_volume<float>(raw.grid, std::move(values));
}

void write_volume(const LabelVolume& vol, const std::string& path, VolumeFormat format) {
    std::vector<std::uint8_t> payload(vol.voxels.begin(), vol.voxels.end());
    if (format == VolumeFormat::native)
        write_native(vol.grid, "u8", payload, path);
    else
        write_nifti(vol.grid, kDtUint8, payload, path);
}

void write_volume(const FloatVolume& vol, const std::string& path, VolumeFormat format) {
    std::vector<std::uint8_t> payload(vol.voxels.size() * 4);
    std::memcpy(payload.data(), vol.voxels.data(), payload.size());
    if (format == VolumeFormat::native)
        write_native(vol.grid, "f32", payload, path);
    else
        write_nifti(vol.grid, kDtFloat32, payload, path);
}

}  // namespace ctarr
