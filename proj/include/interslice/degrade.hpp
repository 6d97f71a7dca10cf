#pragma once

// Degradation and sampling procedures that manufacture training pairs:
// video sub-sequence decimation, HR->LR slice-axis simulation, and the
// in-plane downsampling used for per-subject self-supervision.

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "interslice/volume.hpp"

namespace isr {

enum class SliceProfile { None, Gaussian };

inline const char* profile_name(SliceProfile p) {
    return p == SliceProfile::None ? "none" : "gaussian";
}

inline SliceProfile profile_from_string(const std::string& s) {
    if (s == "none") return SliceProfile::None;
    if (s == "gaussian") return SliceProfile::Gaussian;
    throw value_error("unknown slice profile '" + s + "' (expected none or gaussian)");
}

struct DegradeSpec {
    Axis axis = Axis::Z;
    int factor = 2;
    SliceProfile profile = SliceProfile::None;
    scalar fwhm_mm = 0.0;  // required > 0 when profile is Gaussian

    DegradeSpec(Axis a, int n, SliceProfile p = SliceProfile::None, scalar fwhm = 0.0)
        : axis(a), factor(n), profile(p), fwhm_mm(fwhm) {
        if (n < 2) throw value_error("DegradeSpec: factor must be >= 2, got " + std::to_string(n));
        if (p == SliceProfile::Gaussian && !(fwhm > 0.0))
            throw value_error("DegradeSpec: gaussian profile needs fwhm_mm > 0");
    }
};

// Result of the 15n+1 sub-sequence rule. `kept` holds the 16 retained frames;
// every discarded frame is tagged with the gap it fell into (index into
// `kept` of its left neighbour) and its offset k within that gap.
struct SubsequenceSample {
    struct GroundTruth {
        int gap;    // kept[gap] and kept[gap+1] bound this frame
        int k;      // 1 <= k <= n-1
        Frame frame;
    };

    std::vector<Frame> kept;
    std::vector<GroundTruth> groundtruth;
    int n = 2;
    int window_start = 0;
};

inline int subsequence_window_length(int n) { return 15 * n + 1; }

inline SubsequenceSample sample_subsequence(const FrameSequence& seq, int n, Rng& rng) {
    if (n < 2) throw value_error("sample_subsequence: n must be >= 2");
    const int window = subsequence_window_length(n);
    if (seq.length() < window)
        throw value_error("sample_subsequence: sequence '" + seq.source_id() + "' has " +
                          std::to_string(seq.length()) + " frames but the rule needs at least " +
                          std::to_string(window) + " (15n+1 with n=" + std::to_string(n) + ")");

    const int start = static_cast<int>(rng.uniform_int(0, seq.length() - window));
    SubsequenceSample out;
    out.n = n;
    out.window_start = start;
    out.kept.reserve(16);
    out.groundtruth.reserve(static_cast<size_t>(15) * (n - 1));
    for (int off = 0; off < window; ++off) {
        const Frame& f = seq.frame(start + off);
        if (off % n == 0)
            out.kept.push_back(f);
        else
            out.groundtruth.push_back({off / n, off % n, f});
    }
    return out;
}

namespace detail {

// scipy-style 'reflect' boundary: (c b a | a b c | c b a)
inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

inline std::vector<scalar> gaussian_kernel(scalar sigma_vox) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.5 * sigma_vox)));
    std::vector<scalar> k(static_cast<size_t>(2 * radius + 1));
    scalar sum = 0.0;
    for (int d = -radius; d <= radius; ++d) {
        const scalar w = std::exp(-0.5 * (d / sigma_vox) * (d / sigma_vox));
        k[static_cast<size_t>(d + radius)] = w;
        sum += w;
    }
    for (auto& w : k) w /= sum;
    return k;
}

inline Volume blur_along_axis(const Volume& v, Axis axis, scalar fwhm_mm) {
    const scalar sigma_mm = fwhm_mm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
    const scalar sigma_vox = sigma_mm / v.spacing(axis);
    const auto kernel = gaussian_kernel(sigma_vox);
    const int radius = static_cast<int>(kernel.size() / 2);
    const int ext = v.extent(axis);

    Volume out = v;
    auto stepped_at = [&](int x, int y, int z, int p) -> scalar {
        switch (axis) {
            case Axis::X: return v.at(reflect_index(p, ext), y, z);
            case Axis::Y: return v.at(x, reflect_index(p, ext), z);
            default: return v.at(x, y, reflect_index(p, ext));
        }
    };
    for (int z = 0; z < v.nz(); ++z)
        for (int y = 0; y < v.ny(); ++y)
            for (int x = 0; x < v.nx(); ++x) {
                const int center = axis == Axis::X ? x : (axis == Axis::Y ? y : z);
                scalar acc = 0.0;
                for (int d = -radius; d <= radius; ++d)
                    acc += kernel[static_cast<size_t>(d + radius)] * stepped_at(x, y, z, center + d);
                out.at(x, y, z) = acc;
            }
    return out;
}

}  // namespace detail

// Keeps every factor-th plane along the axis (plane j of the output is plane
// j*factor of the input, bit-exact when no profile is applied). A Gaussian
// profile convolves along the axis first, FWHM given in millimeters.
// Output spacing along the axis is multiplied by the factor.
inline Volume decimate(const Volume& vol, const DegradeSpec& spec) {
    const int ext = vol.extent(spec.axis);
    const int n = spec.factor;
    if (ext < n + 1)
        throw value_error("decimate: " + std::string(axis_name(spec.axis)) + " extent " +
                          std::to_string(ext) + " is too small for factor " + std::to_string(n) +
                          " (need >= " + std::to_string(n + 1) + ")");

    const Volume* src = &vol;
    Volume blurred;
    if (spec.profile == SliceProfile::Gaussian) {
        blurred = detail::blur_along_axis(vol, spec.axis, spec.fwhm_mm);
        src = &blurred;
    }

    const int kept = (ext - 1) / n + 1;
    auto dims = std::array<int, 3>{vol.nx(), vol.ny(), vol.nz()};
    dims[static_cast<int>(spec.axis)] = kept;
    auto spacing = vol.spacing();
    spacing[static_cast<int>(spec.axis)] *= n;

    Volume out(dims[0], dims[1], dims[2], spacing, vol.subject_id());
    for (int z = 0; z < out.nz(); ++z)
        for (int y = 0; y < out.ny(); ++y)
            for (int x = 0; x < out.nx(); ++x) {
                const int sx = spec.axis == Axis::X ? x * n : x;
                const int sy = spec.axis == Axis::Y ? y * n : y;
                const int sz = spec.axis == Axis::Z ? z * n : z;
                out.at(x, y, z) = src->at(sx, sy, sz);
            }
    return out;
}

// Training pair for per-subject self-supervision: the input is the volume
// further downsampled along an in-plane axis, the reference is the volume
// itself, untouched.
struct SelfsupPair {
    Volume input;
    Volume reference;
    bool anisotropy_warning = false;
    std::string warning;
};

inline SelfsupPair build_selfsup_pair(const Volume& lr, int n, Axis axis,
                                      SliceProfile profile = SliceProfile::None,
                                      scalar fwhm_mm = 0.0) {
    if (axis == Axis::Z)
        throw value_error("build_selfsup_pair: axis must be x or y (z is the slice axis)");
    SelfsupPair pair;
    if (!lr.lr_along_z()) {
        pair.anisotropy_warning = true;
        pair.warning = "volume '" + lr.subject_id() + "' is not LR along z (spacing " +
                       std::to_string(lr.spacing()[0]) + ", " + std::to_string(lr.spacing()[1]) +
                       ", " + std::to_string(lr.spacing()[2]) + "); pair built anyway";
    }
    scalar fwhm = fwhm_mm;
    if (profile == SliceProfile::Gaussian && !(fwhm > 0.0)) fwhm = n * lr.spacing(axis);
    pair.reference = lr;
    pair.input = decimate(lr, DegradeSpec(axis, n, profile, fwhm));
    return pair;
}

inline Frame crop_frame_at(const Frame& f, int i0, int j0, int ph, int pw) {
    if (ph < 1 || pw < 1 || i0 < 0 || j0 < 0 || i0 + ph > f.height() || j0 + pw > f.width())
        throw bounds_error("crop_frame_at: patch " + std::to_string(ph) + "x" + std::to_string(pw) +
                           " at (" + std::to_string(i0) + "," + std::to_string(j0) +
                           ") does not fit in " + std::to_string(f.height()) + "x" +
                           std::to_string(f.width()));
    Frame out(ph, pw);
    for (int i = 0; i < ph; ++i)
        for (int j = 0; j < pw; ++j) out.at(i, j) = f.at(i0 + i, j0 + j);
    return out;
}

inline Frame crop_patch(const Frame& f, int ph, int pw, Rng& rng) {
    if (ph > f.height() || pw > f.width())
        throw bounds_error("crop_patch: requested " + std::to_string(ph) + "x" + std::to_string(pw) +
                           " exceeds frame " + std::to_string(f.height()) + "x" +
                           std::to_string(f.width()));
    const int i0 = static_cast<int>(rng.uniform_int(0, f.height() - ph));
    const int j0 = static_cast<int>(rng.uniform_int(0, f.width() - pw));
    return crop_frame_at(f, i0, j0, ph, pw);
}

inline Volume crop_volume_at(const Volume& v, std::array<int, 3> corner, std::array<int, 3> size) {
    for (int a = 0; a < 3; ++a) {
        const int ext = a == 0 ? v.nx() : (a == 1 ? v.ny() : v.nz());
        if (size[a] < 1 || corner[a] < 0 || corner[a] + size[a] > ext)
            throw bounds_error("crop_volume_at: patch does not fit along axis " +
                               std::string(axis_name(static_cast<Axis>(a))) + " (corner " +
                               std::to_string(corner[a]) + ", size " + std::to_string(size[a]) +
                               ", extent " + std::to_string(ext) + ")");
    }
    Volume out(size[0], size[1], size[2], v.spacing(), v.subject_id());
    for (int z = 0; z < size[2]; ++z)
        for (int y = 0; y < size[1]; ++y)
            for (int x = 0; x < size[0]; ++x)
                out.at(x, y, z) = v.at(corner[0] + x, corner[1] + y, corner[2] + z);
    return out;
}

inline Volume crop_patch(const Volume& v, std::array<int, 3> size, Rng& rng) {
    const std::array<int, 3> ext{v.nx(), v.ny(), v.nz()};
    std::array<int, 3> corner{};
    for (int a = 0; a < 3; ++a) {
        if (size[a] > ext[a])
            throw bounds_error("crop_patch: requested size " + std::to_string(size[a]) +
                               " exceeds extent " + std::to_string(ext[a]) + " along " +
                               axis_name(static_cast<Axis>(a)));
        corner[a] = static_cast<int>(rng.uniform_int(0, ext[a] - size[a]));
    }
    return crop_volume_at(v, corner, size);
}

}  // namespace isr
