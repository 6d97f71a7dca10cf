#pragma once

// PSNR / SSIM evaluation and error-map reporting.
//
// PSNR: 10*log10(1/MSE) against a peak of 1.0; identical inputs return +inf.
// SSIM: mean local SSIM over all positions where the full 11x11 Gaussian
// window (sigma 1.5) fits, K1=0.01, K2=0.03, dynamic range 1.0. Volumes are
// scored slice-wise along z and averaged.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "interslice/png_io.hpp"
#include "interslice/volume.hpp"

namespace isr {

inline scalar mse(const scalar* a, const scalar* b, size_t n) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

inline scalar psnr(const Frame& reference, const Frame& test) {
    require_same_shape(reference, test, "psnr");
    const scalar m = mse(reference.data(), test.data(), reference.size());
    if (m == 0.0) return std::numeric_limits<scalar>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

inline scalar psnr(const Volume& reference, const Volume& test) {
    require_same_shape(reference, test, "psnr");
    const scalar m = mse(reference.data(), test.data(), reference.size());
    if (m == 0.0) return std::numeric_limits<scalar>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

namespace detail {

inline const std::vector<scalar>& ssim_window() {
    static const std::vector<scalar> w = [] {
        constexpr int R = 5;  // 11x11
        constexpr double sigma = 1.5;
        std::vector<scalar> k(121);
        double sum = 0.0;
        for (int i = -R; i <= R; ++i)
            for (int j = -R; j <= R; ++j) {
                const double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
                k[static_cast<size_t>((i + R) * 11 + (j + R))] = v;
                sum += v;
            }
        for (auto& v : k) v /= sum;
        return k;
    }();
    return w;
}

// Gaussian-weighted windowed sums via separable passes, valid region only.
// out has size (h-10)*(w-10).
inline void windowed_mean(const scalar* img, int h, int w, std::vector<double>& out) {
    constexpr int R = 5;
    constexpr double sigma = 1.5;
    static const std::vector<double> k1d = [] {
        std::vector<double> k(11);
        double sum = 0.0;
        for (int i = -R; i <= R; ++i) {
            k[static_cast<size_t>(i + R)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
            sum += k[static_cast<size_t>(i + R)];
        }
        for (auto& v : k) v /= sum;
        return k;
    }();

    const int vw = w - 10;
    std::vector<double> tmp(static_cast<size_t>(h) * vw);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < vw; ++j) {
            double acc = 0.0;
            for (int d = 0; d < 11; ++d) acc += k1d[static_cast<size_t>(d)] * img[static_cast<size_t>(i) * w + j + d];
            tmp[static_cast<size_t>(i) * vw + j] = acc;
        }
    const int vh = h - 10;
    out.resize(static_cast<size_t>(vh) * vw);
    for (int i = 0; i < vh; ++i)
        for (int j = 0; j < vw; ++j) {
            double acc = 0.0;
            for (int d = 0; d < 11; ++d) acc += k1d[static_cast<size_t>(d)] * tmp[static_cast<size_t>(i + d) * vw + j];
            out[static_cast<size_t>(i) * vw + j] = acc;
        }
}

}  // namespace detail

inline scalar ssim(const Frame& reference, const Frame& test) {
    require_same_shape(reference, test, "ssim");
    const int h = reference.height(), w = reference.width();
    if (h < 11 || w < 11)
        throw shape_error("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                          " is smaller than the 11x11 window");

    constexpr double C1 = 0.01 * 0.01;  // (K1*L)^2, L = 1
    constexpr double C2 = 0.03 * 0.03;

    const size_t n = reference.size();
    std::vector<scalar> xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
        const double x = reference.data()[i], y = test.data()[i];
        xx[i] = x * x;
        yy[i] = y * y;
        xy[i] = x * y;
    }

    std::vector<double> mx, my, mxx, myy, mxy;
    detail::windowed_mean(reference.data(), h, w, mx);
    detail::windowed_mean(test.data(), h, w, my);
    detail::windowed_mean(xx.data(), h, w, mxx);
    detail::windowed_mean(yy.data(), h, w, myy);
    detail::windowed_mean(xy.data(), h, w, mxy);

    double acc = 0.0;
    for (size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        acc += ((2.0 * mx[i] * my[i] + C1) * (2.0 * cxy + C2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + C1) * (vx + vy + C2));
    }
    return acc / static_cast<double>(mx.size());
}

inline scalar ssim(const Volume& reference, const Volume& test) {
    require_same_shape(reference, test, "ssim");
    double acc = 0.0;
    for (int z = 0; z < reference.nz(); ++z)
        acc += ssim(extract_slice(reference, Axis::Z, z), extract_slice(test, Axis::Z, z));
    return acc / reference.nz();
}

inline Frame error_map(const Frame& reference, const Frame& test) {
    require_same_shape(reference, test, "error_map");
    Frame out(reference.height(), reference.width());
    for (size_t i = 0; i < out.size(); ++i)
        out.data()[i] = std::abs(reference.data()[i] - test.data()[i]);
    return out;
}

inline std::vector<Frame> error_map(const Volume& reference, const Volume& test) {
    require_same_shape(reference, test, "error_map");
    std::vector<Frame> out;
    out.reserve(static_cast<size_t>(reference.nz()));
    for (int z = 0; z < reference.nz(); ++z)
        out.push_back(error_map(extract_slice(reference, Axis::Z, z), extract_slice(test, Axis::Z, z)));
    return out;
}

// Simple blue->red heat colormap for rendered error maps.
inline void heat_color(scalar v, uint8_t& r, uint8_t& g, uint8_t& b) {
    v = std::clamp(v, scalar{0}, scalar{1});
    const double r1 = std::clamp(1.5 * v - 0.25, 0.0, 1.0);
    const double g1 = std::clamp(1.5 - std::abs(3.0 * v - 1.5), 0.0, 1.0);
    const double b1 = std::clamp(1.25 - 1.5 * v, 0.0, 1.0);
    r = static_cast<uint8_t>(std::lround(255 * r1));
    g = static_cast<uint8_t>(std::lround(255 * g1));
    b = static_cast<uint8_t>(std::lround(255 * b1));
}

// Renders |ref - test| with the heat colormap; `scale` maps error scale to
// full color (errors >= scale saturate).
inline PngImage render_error_map(const Frame& err, scalar scale = 0.25) {
    PngImage img;
    img.height = err.height();
    img.width = err.width();
    img.channels = 3;
    img.data.resize(err.size() * 3);
    for (size_t i = 0; i < err.size(); ++i)
        heat_color(err.data()[i] / scale, img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
    return img;
}

struct MetricReport {
    struct Row {
        std::string subject_id;
        scalar psnr_db = 0.0;
        scalar ssim = 0.0;
        bool valid = true;
        std::string note;
    };

    std::vector<Row> rows;
    scalar psnr_mean = 0.0, psnr_sd = 0.0;
    scalar ssim_mean = 0.0, ssim_sd = 0.0;
    int valid_count = 0;
    bool degenerate_sd = false;  // fewer than 2 valid rows

    static void mean_sd(const std::vector<scalar>& xs, scalar& mean, scalar& sd) {
        mean = 0.0;
        sd = 0.0;
        if (xs.empty()) return;
        for (scalar x : xs) mean += x;
        mean /= static_cast<scalar>(xs.size());
        if (xs.size() < 2) return;
        scalar acc = 0.0;
        for (scalar x : xs) acc += (x - mean) * (x - mean);
        sd = std::sqrt(acc / static_cast<scalar>(xs.size() - 1));  // sample SD
    }

    void finalize() {
        std::vector<scalar> ps, ss;
        for (const auto& r : rows)
            if (r.valid) {
                ps.push_back(r.psnr_db);
                ss.push_back(r.ssim);
            }
        valid_count = static_cast<int>(ps.size());
        degenerate_sd = valid_count < 2;
        mean_sd(ps, psnr_mean, psnr_sd);
        mean_sd(ss, ssim_mean, ssim_sd);
    }
};

inline std::string format_metric(scalar v, int precision = 4) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

inline MetricReport evaluate_dataset(const std::vector<std::pair<const Volume*, const Volume*>>& pairs) {
    if (pairs.empty()) throw value_error("evaluate_dataset: empty pair list");
    MetricReport rep;
    for (const auto& [ref, test] : pairs) {
        MetricReport::Row row;
        row.subject_id = ref->subject_id();
        try {
            row.psnr_db = psnr(*ref, *test);
            row.ssim = ssim(*ref, *test);
        } catch (const error& e) {
            row.valid = false;
            row.note = e.what();
        }
        rep.rows.push_back(std::move(row));
    }
    rep.finalize();
    return rep;
}

inline void write_metric_csv(const MetricReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw io_error("cannot open '" + path + "' for writing");
    f << "subject,psnr_db,ssim,note\n";
    for (const auto& r : rep.rows) {
        if (r.valid)
            f << r.subject_id << "," << format_metric(r.psnr_db, 6) << ","
              << format_metric(r.ssim, 6) << ",\n";
        else
            f << r.subject_id << ",,,\"" << r.note << "\"\n";
    }
    f << "mean," << format_metric(rep.psnr_mean, 6) << "," << format_metric(rep.ssim_mean, 6)
      << ",\n";
    f << "sd," << format_metric(rep.psnr_sd, 6) << "," << format_metric(rep.ssim_sd, 6);
    f << (rep.degenerate_sd ? ",\"degenerate N\"\n" : ",\n");
}

inline std::string metric_markdown_table(const std::vector<std::pair<std::string, MetricReport>>& named) {
    std::string md;
    md += "| Method | PSNR Mean | PSNR SD | SSIM Mean | SSIM SD |\n";
    md += "|--------|-----------|---------|-----------|---------|\n";
    for (const auto& [name, rep] : named) {
        md += "| " + name + " | " + format_metric(rep.psnr_mean, 2) + " | " +
              format_metric(rep.psnr_sd, 2) + " | " + format_metric(rep.ssim_mean, 4) + " | " +
              format_metric(rep.ssim_sd, 4) + " |\n";
    }
    return md;
}

}  // namespace isr
