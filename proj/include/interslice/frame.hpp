#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "interslice/common.hpp"

namespace isr {

// In-place min-max normalization to [0,1]. Constant buffers map to all zeros
// so downstream losses stay finite. Non-finite input is rejected.
inline void normalize_intensities(scalar* data, size_t n) {
    if (n == 0) throw value_error("normalize_intensities: empty array");
    scalar lo = data[0], hi = data[0];
    for (size_t i = 0; i < n; ++i) {
        const scalar v = data[i];
        if (!std::isfinite(v))
            throw value_error("normalize_intensities: non-finite value at flat index " +
                              std::to_string(i) + " (" + std::to_string(v) + ")");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const scalar range = hi - lo;
    if (range == 0.0) {
        std::fill(data, data + n, scalar{0});
        return;
    }
    for (size_t i = 0; i < n; ++i) data[i] = (data[i] - lo) / range;
}

inline void normalize_intensities(std::vector<scalar>& v) {
    normalize_intensities(v.data(), v.size());
}

// A single 2D grayscale image. Storage is row-major: at(i, j) with
// 0 <= i < height, 0 <= j < width. Slices extracted from volumes use the
// first remaining axis as i and the second as j.
class Frame {
public:
    Frame() = default;
    Frame(int height, int width, scalar fill = 0.0)
        : h_(height), w_(width), px_(static_cast<size_t>(height) * width, fill) {
        if (height < 1 || width < 1)
            throw shape_error("Frame: dimensions must be >= 1, got " + std::to_string(height) +
                              "x" + std::to_string(width));
    }

    int height() const { return h_; }
    int width() const { return w_; }
    size_t size() const { return px_.size(); }

    scalar& at(int i, int j) { return px_[static_cast<size_t>(i) * w_ + j]; }
    scalar at(int i, int j) const { return px_[static_cast<size_t>(i) * w_ + j]; }

    scalar* data() { return px_.data(); }
    const scalar* data() const { return px_.data(); }

    bool same_shape(const Frame& o) const { return h_ == o.h_ && w_ == o.w_; }

    void normalize() { normalize_intensities(px_); }

    friend bool operator==(const Frame& a, const Frame& b) {
        return a.h_ == b.h_ && a.w_ == b.w_ && a.px_ == b.px_;
    }

private:
    int h_ = 0;
    int w_ = 0;
    std::vector<scalar> px_;
};

inline void require_same_shape(const Frame& a, const Frame& b, const char* who) {
    if (!a.same_shape(b))
        throw shape_error(std::string(who) + ": frame shapes differ (" + std::to_string(a.height()) +
                          "x" + std::to_string(a.width()) + " vs " + std::to_string(b.height()) +
                          "x" + std::to_string(b.width()) + ")");
}

// Bilinear resample with half-pixel centers (the usual image convention).
inline Frame resize_bilinear(const Frame& src, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw shape_error("resize_bilinear: target dims must be >= 1");
    Frame dst(out_h, out_w);
    const double sy = static_cast<double>(src.height()) / out_h;
    const double sx = static_cast<double>(src.width()) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(src.height() - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height() - 1);
        const double wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(src.width() - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width() - 1);
            const double wx = fx - x0;
            dst.at(i, j) = (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                           wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
        }
    }
    return dst;
}

// An ordered stack of equally sized frames (a video clip). Immutable after
// construction; length >= 2 so there is always something to interpolate.
class FrameSequence {
public:
    FrameSequence(std::vector<Frame> frames, std::string source_id)
        : frames_(std::move(frames)), source_id_(std::move(source_id)) {
        if (frames_.size() < 2)
            throw shape_error("FrameSequence '" + source_id_ + "': need at least 2 frames, got " +
                              std::to_string(frames_.size()));
        for (size_t i = 1; i < frames_.size(); ++i)
            if (!frames_[i].same_shape(frames_[0]))
                throw shape_error("FrameSequence '" + source_id_ + "': frame " + std::to_string(i) +
                                  " size differs from frame 0");
    }

    int length() const { return static_cast<int>(frames_.size()); }
    int height() const { return frames_[0].height(); }
    int width() const { return frames_[0].width(); }
    const Frame& frame(int i) const { return frames_.at(static_cast<size_t>(i)); }
    const std::vector<Frame>& frames() const { return frames_; }
    const std::string& source_id() const { return source_id_; }

private:
    std::vector<Frame> frames_;
    std::string source_id_;
};

// Normalized through-plane position of the frame/slice to synthesize:
// t = k / n with 0 <= k <= n. k may be fractional (continuous inference).
struct TargetCoordinate {
    scalar t = 0.0;
    scalar k = 0.0;
    int n = 2;

    TargetCoordinate(scalar k_, int n_) : t(k_ / n_), k(k_), n(n_) {
        if (n_ < 2) throw value_error("TargetCoordinate: n must be >= 2, got " + std::to_string(n_));
        if (k_ < 0.0 || k_ > static_cast<scalar>(n_))
            throw value_error("TargetCoordinate: k must lie in [0, n], got k=" + std::to_string(k_) +
                              " n=" + std::to_string(n_));
    }

    // Plain fractional offset with no meaningful denominator. n=2 is the
    // smallest valid factor; t is what the model consumes.
    static TargetCoordinate fraction(scalar t) { return TargetCoordinate(2.0 * t, 2); }
};

// One training/inference unit: bounding pair, target position and (during
// training) the ground-truth intermediate frame.
struct InterpolationSample {
    Frame left;
    Frame right;
    TargetCoordinate coord;
    std::optional<Frame> target;

    InterpolationSample(Frame l, Frame r, TargetCoordinate c, std::optional<Frame> gt = std::nullopt)
        : left(std::move(l)), right(std::move(r)), coord(c), target(std::move(gt)) {
        require_same_shape(left, right, "InterpolationSample");
        if (target) require_same_shape(left, *target, "InterpolationSample");
    }
};

}  // namespace isr
