#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "interslice/frame.hpp"

namespace isr {

enum class Axis { X = 0, Y = 1, Z = 2 };

inline const char* axis_name(Axis a) {
    switch (a) {
        case Axis::X: return "x";
        case Axis::Y: return "y";
        default: return "z";
    }
}

inline Axis axis_from_string(const std::string& s) {
    if (s == "x" || s == "X") return Axis::X;
    if (s == "y" || s == "Y") return Axis::Y;
    if (s == "z" || s == "Z") return Axis::Z;
    throw value_error("unknown axis '" + s + "' (expected x, y or z)");
}

// 3D scalar grid with per-axis voxel spacing in millimeters.
// Memory order follows NIfTI: x fastest, then y, then z.
class Volume {
public:
    Volume() = default;
    Volume(int nx, int ny, int nz, std::array<scalar, 3> spacing_mm, std::string subject_id = "",
           scalar fill = 0.0)
        : nx_(nx),
          ny_(ny),
          nz_(nz),
          spacing_(spacing_mm),
          subject_id_(std::move(subject_id)),
          vox_(static_cast<size_t>(nx) * ny * nz, fill) {
        if (nx < 1 || ny < 1 || nz < 1)
            throw shape_error("Volume: extents must be >= 1, got " + shape_string());
        for (scalar s : spacing_)
            if (!(s > 0.0))
                throw value_error("Volume: spacing components must be strictly positive");
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }
    int nz() const { return nz_; }
    int extent(Axis a) const { return a == Axis::X ? nx_ : (a == Axis::Y ? ny_ : nz_); }
    size_t size() const { return vox_.size(); }

    const std::array<scalar, 3>& spacing() const { return spacing_; }
    scalar spacing(Axis a) const { return spacing_[static_cast<int>(a)]; }
    void set_spacing(std::array<scalar, 3> s) {
        for (scalar v : s)
            if (!(v > 0.0)) throw value_error("Volume: spacing components must be strictly positive");
        spacing_ = s;
    }

    const std::string& subject_id() const { return subject_id_; }
    void set_subject_id(std::string id) { subject_id_ = std::move(id); }

    scalar& at(int x, int y, int z) { return vox_[index(x, y, z)]; }
    scalar at(int x, int y, int z) const { return vox_[index(x, y, z)]; }

    scalar* data() { return vox_.data(); }
    const scalar* data() const { return vox_.data(); }

    size_t index(int x, int y, int z) const {
        return static_cast<size_t>(x) + static_cast<size_t>(nx_) * (static_cast<size_t>(y) + static_cast<size_t>(ny_) * z);
    }

    bool same_shape(const Volume& o) const { return nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_; }

    std::string shape_string() const {
        return std::to_string(nx_) + "x" + std::to_string(ny_) + "x" + std::to_string(nz_);
    }

    // A volume is LR along z iff the z spacing dominates both in-plane spacings.
    bool lr_along_z() const { return spacing_[2] > spacing_[0] && spacing_[2] > spacing_[1]; }

    void normalize() { normalize_intensities(vox_.data(), vox_.size()); }

    friend bool operator==(const Volume& a, const Volume& b) {
        return a.nx_ == b.nx_ && a.ny_ == b.ny_ && a.nz_ == b.nz_ && a.vox_ == b.vox_;
    }

private:
    int nx_ = 0, ny_ = 0, nz_ = 0;
    std::array<scalar, 3> spacing_{1.0, 1.0, 1.0};
    std::string subject_id_;
    std::vector<scalar> vox_;
};

inline void require_same_shape(const Volume& a, const Volume& b, const char* who) {
    if (!a.same_shape(b))
        throw shape_error(std::string(who) + ": volume shapes differ (" + a.shape_string() + " vs " +
                          b.shape_string() + ")");
}

// Cross-section at `index` along `axis`. The frame is indexed
// (first remaining axis, second remaining axis), e.g. a z-slice is (x, y).
inline Frame extract_slice(const Volume& v, Axis axis, int index) {
    const int ext = v.extent(axis);
    if (index < 0 || index >= ext)
        throw bounds_error("extract_slice: index " + std::to_string(index) + " out of range for " +
                           axis_name(axis) + " extent " + std::to_string(ext));
    switch (axis) {
        case Axis::Z: {
            Frame f(v.nx(), v.ny());
            for (int x = 0; x < v.nx(); ++x)
                for (int y = 0; y < v.ny(); ++y) f.at(x, y) = v.at(x, y, index);
            return f;
        }
        case Axis::Y: {
            Frame f(v.nx(), v.nz());
            for (int x = 0; x < v.nx(); ++x)
                for (int z = 0; z < v.nz(); ++z) f.at(x, z) = v.at(x, index, z);
            return f;
        }
        default: {
            Frame f(v.ny(), v.nz());
            for (int y = 0; y < v.ny(); ++y)
                for (int z = 0; z < v.nz(); ++z) f.at(y, z) = v.at(index, y, z);
            return f;
        }
    }
}

// Inverse of extract_slice; the frame shape must match the cross-section.
inline void insert_slice(Volume& v, Axis axis, int index, const Frame& f) {
    const int ext = v.extent(axis);
    if (index < 0 || index >= ext)
        throw bounds_error("insert_slice: index " + std::to_string(index) + " out of range for " +
                           axis_name(axis) + " extent " + std::to_string(ext));
    switch (axis) {
        case Axis::Z:
            if (f.height() != v.nx() || f.width() != v.ny())
                throw shape_error("insert_slice: frame does not match z cross-section");
            for (int x = 0; x < v.nx(); ++x)
                for (int y = 0; y < v.ny(); ++y) v.at(x, y, index) = f.at(x, y);
            break;
        case Axis::Y:
            if (f.height() != v.nx() || f.width() != v.nz())
                throw shape_error("insert_slice: frame does not match y cross-section");
            for (int x = 0; x < v.nx(); ++x)
                for (int z = 0; z < v.nz(); ++z) v.at(x, index, z) = f.at(x, z);
            break;
        default:
            if (f.height() != v.ny() || f.width() != v.nz())
                throw shape_error("insert_slice: frame does not match x cross-section");
            for (int y = 0; y < v.ny(); ++y)
                for (int z = 0; z < v.nz(); ++z) v.at(index, y, z) = f.at(y, z);
            break;
    }
}

}  // namespace isr
