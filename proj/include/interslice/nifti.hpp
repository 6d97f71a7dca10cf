#pragma once

// Volume file IO.
//
// Two formats are supported:
//  - NIfTI-1 (.nii, .nii.gz): dims from dim[1..3], spacing from pixdim[1..3],
//    payload cast to 32-bit float on write. Reading accepts the common
//    integer/float datatypes and applies scl_slope/scl_inter.
//  - Raw volume (any other extension, canonical .rawvol): one JSON header
//    line {"shape":[x,y,z],"spacing":[sx,sy,sz]} terminated by '\n',
//    followed by x-fastest little-endian float32 voxels.
//
// load_volume() sniffs the content (gzip magic / '{' / NIfTI header), so
// either format loads regardless of extension.

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "interslice/volume.hpp"

namespace isr {

static_assert(std::endian::native == std::endian::little,
              "interslice file formats assume a little-endian host");

namespace detail {

struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

template <typename T>
void bswap(T& v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

inline void swap_header(Nifti1Header& h) {
    bswap(h.sizeof_hdr);
    bswap(h.extents);
    bswap(h.session_error);
    for (auto& d : h.dim) bswap(d);
    bswap(h.intent_p1);
    bswap(h.intent_p2);
    bswap(h.intent_p3);
    bswap(h.intent_code);
    bswap(h.datatype);
    bswap(h.bitpix);
    bswap(h.slice_start);
    for (auto& p : h.pixdim) bswap(p);
    bswap(h.vox_offset);
    bswap(h.scl_slope);
    bswap(h.scl_inter);
    bswap(h.slice_end);
    bswap(h.cal_max);
    bswap(h.cal_min);
    bswap(h.slice_duration);
    bswap(h.toffset);
    bswap(h.glmax);
    bswap(h.glmin);
    bswap(h.qform_code);
    bswap(h.sform_code);
    bswap(h.quatern_b);
    bswap(h.quatern_c);
    bswap(h.quatern_d);
    bswap(h.qoffset_x);
    bswap(h.qoffset_y);
    bswap(h.qoffset_z);
    for (auto& v : h.srow_x) bswap(v);
    for (auto& v : h.srow_y) bswap(v);
    for (auto& v : h.srow_z) bswap(v);
}

class GzReader {
public:
    explicit GzReader(const std::string& path) : f_(gzopen(path.c_str(), "rb")) {
        if (!f_) throw io_error("cannot open '" + path + "' for reading");
    }
    ~GzReader() {
        if (f_) gzclose(f_);
    }
    GzReader(const GzReader&) = delete;
    GzReader& operator=(const GzReader&) = delete;

    void read_exact(void* dst, size_t n, const std::string& what) {
        size_t got = 0;
        auto* p = static_cast<unsigned char*>(dst);
        while (got < n) {
            const unsigned chunk = static_cast<unsigned>(std::min<size_t>(n - got, 1u << 28));
            const int r = gzread(f_, p + got, chunk);
            if (r <= 0) throw format_error("truncated file while reading " + what);
            got += static_cast<size_t>(r);
        }
    }

    void skip(size_t n) {
        std::vector<char> buf(std::min<size_t>(n, 65536));
        size_t left = n;
        while (left > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min(left, buf.size()));
            const int r = gzread(f_, buf.data(), chunk);
            if (r <= 0) throw format_error("truncated file while skipping header padding");
            left -= static_cast<size_t>(r);
        }
    }

private:
    gzFile f_;
};

template <typename T>
void copy_cast(const std::vector<char>& raw, std::vector<scalar>& out, bool swapped) {
    const size_t n = raw.size() / sizeof(T);
    out.resize(n);
    const char* src = raw.data();
    for (size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, src + i * sizeof(T), sizeof(T));
        if (swapped) bswap(v);
        out[i] = static_cast<scalar>(static_cast<float>(v));
    }
}

}  // namespace detail

inline bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Volume load_nifti(const std::string& path, bool normalize = true) {
    detail::GzReader in(path);
    detail::Nifti1Header h{};
    in.read_exact(&h, sizeof(h), "NIfTI header of '" + path + "'");

    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        auto test = h.sizeof_hdr;
        detail::bswap(test);
        if (test != 348)
            throw format_error("'" + path + "' is not a NIfTI-1 file (sizeof_hdr=" +
                               std::to_string(h.sizeof_hdr) + ")");
        swapped = true;
        detail::swap_header(h);
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0) {
        if (std::strncmp(h.magic, "ni1", 3) == 0)
            throw format_error("'" + path + "': detached .hdr/.img pairs are not supported");
        throw format_error("'" + path + "': bad NIfTI magic");
    }

    const int ndim = h.dim[0];
    if (ndim < 3 || ndim > 7)
        throw shape_error("'" + path + "': expected a 3D volume, dim[0]=" + std::to_string(ndim));
    for (int d = 4; d <= ndim; ++d)
        if (h.dim[d] > 1)
            throw shape_error("'" + path + "': non-3D payload (dim[" + std::to_string(d) +
                              "]=" + std::to_string(h.dim[d]) + ")");
    const int nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    if (nx < 1 || ny < 1 || nz < 1) throw shape_error("'" + path + "': degenerate dims");

    size_t elem = 0;
    switch (h.datatype) {
        case 2: elem = 1; break;    // uint8
        case 4: elem = 2; break;    // int16
        case 8: elem = 4; break;    // int32
        case 16: elem = 4; break;   // float32
        case 64: elem = 8; break;   // float64
        case 256: elem = 1; break;  // int8
        case 512: elem = 2; break;  // uint16
        case 768: elem = 4; break;  // uint32
        default:
            throw format_error("'" + path + "': unsupported NIfTI datatype " +
                               std::to_string(h.datatype));
    }

    const size_t nvox = static_cast<size_t>(nx) * ny * nz;
    const long offset = static_cast<long>(h.vox_offset);
    if (offset < 348) throw format_error("'" + path + "': vox_offset too small");
    in.skip(static_cast<size_t>(offset) - sizeof(h));

    std::vector<char> raw(nvox * elem);
    in.read_exact(raw.data(), raw.size(), "voxel payload of '" + path + "'");

    std::vector<scalar> vals;
    switch (h.datatype) {
        case 2: detail::copy_cast<uint8_t>(raw, vals, false); break;
        case 4: detail::copy_cast<int16_t>(raw, vals, swapped); break;
        case 8: detail::copy_cast<int32_t>(raw, vals, swapped); break;
        case 16: detail::copy_cast<float>(raw, vals, swapped); break;
        case 64: detail::copy_cast<double>(raw, vals, swapped); break;
        case 256: detail::copy_cast<int8_t>(raw, vals, false); break;
        case 512: detail::copy_cast<uint16_t>(raw, vals, swapped); break;
        case 768: detail::copy_cast<uint32_t>(raw, vals, swapped); break;
    }

    if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f))
        for (auto& v : vals) v = snap_f32(v * h.scl_slope + h.scl_inter);

    auto sp = [&](int i) {
        const float p = h.pixdim[i];
        return p > 0.0f ? static_cast<scalar>(p) : scalar{1};
    };
    Volume vol(nx, ny, nz, {sp(1), sp(2), sp(3)},
               std::filesystem::path(path).stem().stem().string());
    std::copy(vals.begin(), vals.end(), vol.data());
    if (normalize) vol.normalize();
    return vol;
}

inline void save_nifti(const Volume& v, const std::string& path) {
    detail::Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(v.nx());
    h.dim[2] = static_cast<int16_t>(v.ny());
    h.dim[3] = static_cast<int16_t>(v.nz());
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = 16;  // float32
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(v.spacing()[0]);
    h.pixdim[2] = static_cast<float>(v.spacing()[1]);
    h.pixdim[3] = static_cast<float>(v.spacing()[2]);
    for (int d = 4; d < 8; ++d) h.pixdim[d] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimeters
    h.sform_code = 1;
    h.srow_x[0] = h.pixdim[1];
    h.srow_y[1] = h.pixdim[2];
    h.srow_z[2] = h.pixdim[3];
    std::strncpy(h.magic, "n+1", 4);

    std::vector<float> payload(v.size());
    for (size_t i = 0; i < v.size(); ++i) payload[i] = static_cast<float>(v.data()[i]);
    const char ext_flag[4] = {0, 0, 0, 0};

    if (has_suffix(path, ".gz")) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw io_error("cannot open '" + path + "' for writing");
        bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h)) &&
                  gzwrite(f, ext_flag, 4) == 4 &&
                  gzwrite(f, payload.data(), static_cast<unsigned>(payload.size() * 4)) ==
                      static_cast<int>(payload.size() * 4);
        gzclose(f);
        if (!ok) throw io_error("short write to '" + path + "'");
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw io_error("cannot open '" + path + "' for writing");
        f.write(reinterpret_cast<const char*>(&h), sizeof(h));
        f.write(ext_flag, 4);
        f.write(reinterpret_cast<const char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * 4));
        if (!f) throw io_error("short write to '" + path + "'");
    }
}

inline Volume load_raw_volume(const std::string& path, bool normalize = true) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for reading");
    std::string header;
    if (!std::getline(f, header)) throw format_error("'" + path + "': missing raw volume header");

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(header);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("'" + path + "': bad raw volume header: " + e.what());
    }
    if (!j.contains("shape") || !j.contains("spacing") || j["shape"].size() != 3 ||
        j["spacing"].size() != 3)
        throw format_error("'" + path + "': raw header must carry shape[3] and spacing[3]");

    const int nx = j["shape"][0], ny = j["shape"][1], nz = j["shape"][2];
    Volume v(nx, ny, nz,
             {j["spacing"][0].get<scalar>(), j["spacing"][1].get<scalar>(),
              j["spacing"][2].get<scalar>()},
             std::filesystem::path(path).stem().string());

    std::vector<float> payload(v.size());
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size() * 4));
    if (static_cast<size_t>(f.gcount()) != payload.size() * 4)
        throw format_error("'" + path + "': truncated raw volume payload (expected " +
                           std::to_string(payload.size() * 4) + " bytes)");
    for (size_t i = 0; i < payload.size(); ++i) v.data()[i] = static_cast<scalar>(payload[i]);
    if (normalize) v.normalize();
    return v;
}

inline void save_raw_volume(const Volume& v, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open '" + path + "' for writing");
    nlohmann::json j;
    j["shape"] = {v.nx(), v.ny(), v.nz()};
    j["spacing"] = {v.spacing()[0], v.spacing()[1], v.spacing()[2]};
    f << j.dump() << "\n";
    std::vector<float> payload(v.size());
    for (size_t i = 0; i < v.size(); ++i) payload[i] = static_cast<float>(v.data()[i]);
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * 4));
    if (!f) throw io_error("short write to '" + path + "'");
}

// Content-sniffing loader: gzip and NIfTI files are recognized by magic,
// anything starting with '{' is the raw format.
inline Volume load_volume(const std::string& path, bool normalize = true) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw io_error("cannot open '" + path + "' for reading");
    char head[2] = {0, 0};
    probe.read(head, 2);
    if (probe.gcount() < 2) throw format_error("'" + path + "': file too short");
    probe.close();
    if (head[0] == '{') return load_raw_volume(path, normalize);
    return load_nifti(path, normalize);
}

inline void save_volume(const Volume& v, const std::string& path) {
    if (has_suffix(path, ".nii") || has_suffix(path, ".nii.gz"))
        save_nifti(v, path);
    else
        save_raw_volume(v, path);
}

}  // namespace isr
