#pragma once

// Full-volume inter-slice super-resolution. Original slices are copied
// through verbatim; intermediate positions are predicted from the bracketing
// slice pair at t = fractional offset. Large in-plane matrices run tile-wise
// with overlap blending to bound memory.

#include <algorithm>
#include <cmath>
#include <vector>

#include "interslice/model.hpp"
#include "interslice/volume.hpp"

namespace isr {

struct TileOptions {
    int tile = 256;     // max in-plane tile edge fed to the network
    int overlap = 16;   // blended margin between neighbouring tiles
};

namespace detail {

// 1D tiling: core intervals covering [0, extent) with `overlap` shared pixels.
struct TileSpan {
    int begin, end;  // tile extent in the plane, [begin, end)
};

inline std::vector<TileSpan> tile_spans(int extent, int tile, int overlap) {
    if (extent <= tile) return {{0, extent}};
    std::vector<TileSpan> spans;
    const int stride = tile - overlap;
    for (int b = 0;; b += stride) {
        int e = std::min(b + tile, extent);
        spans.push_back({b, e});
        if (e == extent) break;
    }
    return spans;
}

// Linear ramp weight for blending: 1 in the interior, falling to 1/(overlap+1)
// at tile borders that have a neighbour.
inline double tile_weight(int pos, const TileSpan& s, int extent, int overlap) {
    double w = 1.0;
    const int from_lo = pos - s.begin;
    const int from_hi = s.end - 1 - pos;
    if (s.begin > 0 && from_lo < overlap) w = std::min(w, (from_lo + 1.0) / (overlap + 1.0));
    if (s.end < extent && from_hi < overlap) w = std::min(w, (from_hi + 1.0) / (overlap + 1.0));
    return w;
}

}  // namespace detail

// Predicts the frame between two z-slices, tiling the plane when needed.
inline Frame predict_plane(const SRModel& model, const Frame& left, const Frame& right, scalar t,
                           const TileOptions& opts) {
    const int h = left.height(), w = left.width();
    if (h <= opts.tile && w <= opts.tile) return model.forward(left, right, TargetCoordinate::fraction(t));

    const auto rows = detail::tile_spans(h, opts.tile, opts.overlap);
    const auto cols = detail::tile_spans(w, opts.tile, opts.overlap);
    Frame acc(h, w, 0.0);
    Frame wsum(h, w, 0.0);
    for (const auto& rs : rows)
        for (const auto& cs : cols) {
            Frame l(rs.end - rs.begin, cs.end - cs.begin), r(rs.end - rs.begin, cs.end - cs.begin);
            for (int i = rs.begin; i < rs.end; ++i)
                for (int j = cs.begin; j < cs.end; ++j) {
                    l.at(i - rs.begin, j - cs.begin) = left.at(i, j);
                    r.at(i - rs.begin, j - cs.begin) = right.at(i, j);
                }
            const Frame pred = model.forward(l, r, TargetCoordinate::fraction(t));
            for (int i = rs.begin; i < rs.end; ++i) {
                const double wy = detail::tile_weight(i, rs, h, opts.overlap);
                for (int j = cs.begin; j < cs.end; ++j) {
                    const double wt = wy * detail::tile_weight(j, cs, w, opts.overlap);
                    acc.at(i, j) += wt * pred.at(i - rs.begin, j - cs.begin);
                    wsum.at(i, j) += wt;
                }
            }
        }
    for (size_t i = 0; i < acc.size(); ++i) acc.data()[i] /= wsum.data()[i];
    return acc;
}

// Integer-factor SR along z: output has n*(Z-1)+1 slices, spacing sz/n.
// Slice j*n is input slice j, bit-exact; predictions are clamped to [0,1].
inline Volume super_resolve(const Volume& lr, const SRModel& model, int n,
                            const TileOptions& opts = {}) {
    if (n < 2) throw value_error("super_resolve: factor must be >= 2");
    if (lr.nz() < 2) throw value_error("super_resolve: need at least 2 slices along z");

    const int out_z = n * (lr.nz() - 1) + 1;
    auto spacing = lr.spacing();
    spacing[2] /= n;
    Volume out(lr.nx(), lr.ny(), out_z, spacing, lr.subject_id());

    for (int j = 0; j < lr.nz(); ++j) insert_slice(out, Axis::Z, j * n, extract_slice(lr, Axis::Z, j));
    for (int j = 0; j + 1 < lr.nz(); ++j) {
        const Frame left = extract_slice(lr, Axis::Z, j);
        const Frame right = extract_slice(lr, Axis::Z, j + 1);
        for (int k = 1; k < n; ++k) {
            Frame pred = predict_plane(model, left, right, static_cast<scalar>(k) / n, opts);
            for (size_t i = 0; i < pred.size(); ++i)
                pred.data()[i] = std::clamp(pred.data()[i], scalar{0}, scalar{1});
            insert_slice(out, Axis::Z, j * n + k, pred);
        }
    }
    return out;
}

// Arbitrary-spacing SR: the output grid is z = i * target_spacing (mm) over
// the input z-range. Grid positions that land on input slices copy them.
inline Volume super_resolve_continuous(const Volume& lr, const SRModel& model,
                                       scalar target_spacing, const TileOptions& opts = {}) {
    const scalar sz = lr.spacing()[2];
    if (!(target_spacing > 0.0))
        throw value_error("super_resolve_continuous: target spacing must be positive");
    if (target_spacing > sz)
        throw value_error("super_resolve_continuous: target spacing " +
                          std::to_string(target_spacing) + " exceeds input spacing " +
                          std::to_string(sz) + " (this tool does not coarsen)");
    if (lr.nz() < 2) throw value_error("super_resolve_continuous: need at least 2 slices");

    const scalar z_range = (lr.nz() - 1) * sz;
    const int out_z = static_cast<int>(std::floor(z_range / target_spacing + 1e-9)) + 1;
    auto spacing = lr.spacing();
    spacing[2] = target_spacing;
    Volume out(lr.nx(), lr.ny(), out_z, spacing, lr.subject_id());

    constexpr scalar kSnap = 1e-9;
    for (int i = 0; i < out_z; ++i) {
        const scalar pos = i * target_spacing / sz;  // in input slice units
        int j = static_cast<int>(std::floor(pos));
        scalar t = pos - j;
        if (t > 1.0 - kSnap) {
            ++j;
            t = 0.0;
        }
        if (t < kSnap) t = 0.0;
        j = std::min(j, lr.nz() - 1);
        if (t == 0.0) {
            insert_slice(out, Axis::Z, i, extract_slice(lr, Axis::Z, j));
        } else {
            const Frame left = extract_slice(lr, Axis::Z, j);
            const Frame right = extract_slice(lr, Axis::Z, j + 1);
            Frame pred = predict_plane(model, left, right, t, opts);
            for (size_t p = 0; p < pred.size(); ++p)
                pred.data()[p] = std::clamp(pred.data()[p], scalar{0}, scalar{1});
            insert_slice(out, Axis::Z, i, pred);
        }
    }
    return out;
}

// Classical baseline: linear interpolation along z only, same grid contract
// as super_resolve.
inline Volume trilinear_upsample(const Volume& lr, int n) {
    if (n < 2) throw value_error("trilinear_upsample: factor must be >= 2");
    if (lr.nz() < 2) throw value_error("trilinear_upsample: need at least 2 slices along z");

    const int out_z = n * (lr.nz() - 1) + 1;
    auto spacing = lr.spacing();
    spacing[2] /= n;
    Volume out(lr.nx(), lr.ny(), out_z, spacing, lr.subject_id());
    for (int zo = 0; zo < out_z; ++zo) {
        const int j = zo / n;
        const int k = zo % n;
        if (k == 0) {
            for (int y = 0; y < lr.ny(); ++y)
                for (int x = 0; x < lr.nx(); ++x) out.at(x, y, zo) = lr.at(x, y, j);
        } else {
            const scalar t = static_cast<scalar>(k) / n;
            for (int y = 0; y < lr.ny(); ++y)
                for (int x = 0; x < lr.nx(); ++x)
                    out.at(x, y, zo) = (1.0 - t) * lr.at(x, y, j) + t * lr.at(x, y, j + 1);
        }
    }
    return out;
}

}  // namespace isr
