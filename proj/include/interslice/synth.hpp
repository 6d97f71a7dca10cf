#pragma once

// Synthetic data generators. These stand in for the licensed video/MR
// datasets in tests and desk-scale runs: sequences with smooth inter-frame
// motion, and phantoms that are band-limited along z so slice decimation
// stays information-preserving. sinusoid_z additionally has a closed form at
// arbitrary (fractional) slice positions, giving tests an exact oracle.

#include <array>
#include <string>
#include <vector>

#include "interslice/volume.hpp"

namespace isr {

enum class VideoKind { TranslatingGradient, MovingBlob, RotatingBars };
enum class PhantomKind { SphereShells, SinusoidZ, LayeredTissue };

inline VideoKind video_kind_from_string(const std::string& s) {
    if (s == "translating_gradient") return VideoKind::TranslatingGradient;
    if (s == "moving_blob") return VideoKind::MovingBlob;
    if (s == "rotating_bars") return VideoKind::RotatingBars;
    throw value_error("unknown video kind '" + s + "'");
}

inline PhantomKind phantom_kind_from_string(const std::string& s) {
    if (s == "sphere_shells") return PhantomKind::SphereShells;
    if (s == "sinusoid_z") return PhantomKind::SinusoidZ;
    if (s == "layered_tissue") return PhantomKind::LayeredTissue;
    throw value_error("unknown phantom kind '" + s + "'");
}

inline FrameSequence make_video(VideoKind kind, int frames, int height, int width, uint64_t seed) {
    if (frames < 2) throw value_error("make_video: need at least 2 frames");
    Rng r(mix_seed(seed, static_cast<uint64_t>(kind) + 11));
    std::vector<Frame> out;
    out.reserve(static_cast<size_t>(frames));

    switch (kind) {
        case VideoKind::TranslatingGradient: {
            // sinusoidal ramp drifting in phase; phase speed keeps adjacent
            // frames within a mean abs difference well under 0.05
            const double dir = r.uniform(0.0, 2.0 * M_PI);
            const double wavelength = r.uniform(24.0, 48.0);
            const double kr = 2.0 * M_PI * std::sin(dir) / wavelength;
            const double kc = 2.0 * M_PI * std::cos(dir) / wavelength;
            const double phi = r.uniform(0.0, 2.0 * M_PI);
            const double speed = r.uniform(0.05, 0.08);
            for (int i = 0; i < frames; ++i) {
                Frame f(height, width);
                for (int y = 0; y < height; ++y)
                    for (int x = 0; x < width; ++x)
                        f.at(y, x) = snap_f32(0.5 + 0.5 * std::sin(kr * y + kc * x + phi + speed * i));
                out.push_back(std::move(f));
            }
            break;
        }
        case VideoKind::MovingBlob: {
            struct Blob {
                double cy, cx, ry, rx, wy, wx, py, px, sigma, amp;
            };
            std::vector<Blob> blobs;
            for (int b = 0; b < 2; ++b) {
                Blob bl;
                bl.cy = r.uniform(0.3, 0.7) * height;
                bl.cx = r.uniform(0.3, 0.7) * width;
                bl.ry = r.uniform(0.1, 0.2) * height;
                bl.rx = r.uniform(0.1, 0.2) * width;
                bl.sigma = r.uniform(0.12, 0.18) * std::min(height, width);
                // cap angular speed so per-frame motion stays ~1 pixel
                bl.wy = std::min(0.08, 1.0 / bl.ry);
                bl.wx = std::min(0.08, 1.0 / bl.rx);
                bl.py = r.uniform(0.0, 2.0 * M_PI);
                bl.px = r.uniform(0.0, 2.0 * M_PI);
                bl.amp = r.uniform(0.5, 0.8);
                blobs.push_back(bl);
            }
            for (int i = 0; i < frames; ++i) {
                Frame f(height, width, 0.1);
                for (const auto& b : blobs) {
                    const double by = b.cy + b.ry * std::sin(b.wy * i + b.py);
                    const double bx = b.cx + b.rx * std::cos(b.wx * i + b.px);
                    for (int y = 0; y < height; ++y)
                        for (int x = 0; x < width; ++x) {
                            const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
                            f.at(y, x) += b.amp * std::exp(-0.5 * d2 / (b.sigma * b.sigma));
                        }
                }
                for (size_t p = 0; p < f.size(); ++p)
                    f.data()[p] = snap_f32(std::clamp(f.data()[p], scalar{0}, scalar{1}));
                out.push_back(std::move(f));
            }
            break;
        }
        case VideoKind::RotatingBars: {
            const double k = 2.0 * M_PI / r.uniform(20.0, 32.0);
            const double cy = height / 2.0, cx = width / 2.0;
            const double rho_max = std::sqrt(cy * cy + cx * cx);
            const double dtheta = 0.15 / (0.5 * k * rho_max);  // max frame change ~0.15
            const double theta0 = r.uniform(0.0, 2.0 * M_PI);
            const double phi = r.uniform(0.0, 2.0 * M_PI);
            for (int i = 0; i < frames; ++i) {
                const double th = theta0 + dtheta * i;
                Frame f(height, width);
                for (int y = 0; y < height; ++y)
                    for (int x = 0; x < width; ++x) {
                        const double u = (y - cy) * std::cos(th) + (x - cx) * std::sin(th);
                        f.at(y, x) = snap_f32(0.5 + 0.5 * std::sin(k * u + phi));
                    }
                out.push_back(std::move(f));
            }
            break;
        }
    }
    std::string id = "synth-";
    id += (kind == VideoKind::TranslatingGradient
               ? "translating_gradient"
               : kind == VideoKind::MovingBlob ? "moving_blob" : "rotating_bars");
    id += "-" + std::to_string(seed);
    return FrameSequence(std::move(out), id);
}

// Analytic description of the sinusoid_z phantom. value() is exact at any
// real-valued slice position, which is what SR tests compare against.
struct SinusoidZ {
    double omega_z;  // rad per voxel along z
    double kx, ky;   // in-plane phase gradient, rad per voxel
    double phi;
    double amp;

    static SinusoidZ from_seed(uint64_t seed) {
        Rng r(mix_seed(seed, 0x51u));
        SinusoidZ p;
        p.omega_z = r.uniform(0.25, 0.35);
        p.kx = r.uniform(0.06, 0.15);
        p.ky = r.uniform(0.06, 0.15);
        p.phi = r.uniform(0.0, 2.0 * M_PI);
        p.amp = r.uniform(0.38, 0.45);
        return p;
    }

    scalar value(double x, double y, double z) const {
        return 0.5 + amp * std::sin(omega_z * z + kx * x + ky * y + phi);
    }
};

inline Volume make_phantom_volume(PhantomKind kind, int nx, int ny, int nz,
                                  std::array<scalar, 3> spacing, uint64_t seed) {
    std::string id = "phantom-";
    id += (kind == PhantomKind::SphereShells
               ? "sphere_shells"
               : kind == PhantomKind::SinusoidZ ? "sinusoid_z" : "layered_tissue");
    id += "-" + std::to_string(seed);
    Volume v(nx, ny, nz, spacing, id);
    Rng r(mix_seed(seed, static_cast<uint64_t>(kind) + 77));

    switch (kind) {
        case PhantomKind::SinusoidZ: {
            const SinusoidZ p = SinusoidZ::from_seed(seed);
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) v.at(x, y, z) = snap_f32(p.value(x, y, z));
            break;
        }
        case PhantomKind::SphereShells: {
            const double cx = nx * r.uniform(0.4, 0.6);
            const double cy = ny * r.uniform(0.4, 0.6);
            const double cz = nz * r.uniform(0.4, 0.6);
            const double rho = r.uniform(0.22, 0.30);  // rad per voxel of radius
            const double phi = r.uniform(0.0, 2.0 * M_PI);
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) {
                        const double d = std::sqrt((x - cx) * (x - cx) + (y - cy) * (y - cy) +
                                                   (z - cz) * (z - cz));
                        v.at(x, y, z) = snap_f32(0.5 + 0.45 * std::sin(rho * d + phi));
                    }
            break;
        }
        case PhantomKind::LayeredTissue: {
            // soft tissue-like layers stacked along z with undulating
            // boundaries; transition width >= 3 voxels keeps z band-limited
            const int nlayers = 4;
            std::vector<double> level(nlayers + 1), boundary(nlayers);
            for (auto& l : level) l = r.uniform(0.15, 0.9);
            for (int b = 0; b < nlayers; ++b) boundary[b] = nz * (b + 1.0) / (nlayers + 1.0);
            const double ax = r.uniform(0.05, 0.12), bx = r.uniform(0.0, 2 * M_PI);
            const double ay = r.uniform(0.05, 0.12), by = r.uniform(0.0, 2 * M_PI);
            const double undulation = r.uniform(1.0, 2.5);
            const double width = r.uniform(3.0, 4.0);
            const double tx = r.uniform(0.1, 0.2), ty = r.uniform(0.1, 0.2);
            for (int z = 0; z < nz; ++z)
                for (int y = 0; y < ny; ++y)
                    for (int x = 0; x < nx; ++x) {
                        const double wob =
                            undulation * std::sin(ax * x + bx) * std::sin(ay * y + by);
                        double val = level[0];
                        for (int b = 0; b < nlayers; ++b) {
                            const double s = 1.0 / (1.0 + std::exp(-(z - (boundary[b] + wob)) / width));
                            val += (level[b + 1] - level[b]) * s;
                        }
                        val *= 1.0 + 0.08 * std::sin(tx * x + 0.7) * std::sin(ty * y + 1.3);
                        v.at(x, y, z) = snap_f32(std::clamp(val, 0.02, 0.98));
                    }
            break;
        }
    }
    return v;
}

}  // namespace isr
