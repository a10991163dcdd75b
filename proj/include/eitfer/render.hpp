#pragma once
// Raster output of element-wise images as binary PPM (P6).
//
// Colormap, with s = clamp(value / range, -1, 1):
//   s <= 0: (255 (1 + s), 255 (1 + s), 255)    blue .. white
//   s >= 0: (255, 255 (1 - s), 255 (1 - s))    white .. red
// channels rounded to nearest. Pixels outside the mesh are white.

#include "eitfer/mesh.hpp"
#include "eitfer/recon.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace eitfer {

inline constexpr int kRasterSize = 256;

using Rgb = std::array<std::uint8_t, 3>;

inline Rgb diverging_color(double value, double range) {
    double s = range > 0 ? value / range : 0.0;
    if (std::isnan(s)) s = 0;
    s = std::clamp(s, -1.0, 1.0);
    auto ch = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
    if (s <= 0) return {ch(1 + s), ch(1 + s), 255};
    return {255, ch(1 - s), ch(1 - s)};
}

// Element under each pixel centre (row-major from the top-left), -1 outside.
// The grid is a square over the mesh's bounding box, centred on it.
class PixelMap {
public:
    explicit PixelMap(const Mesh &mesh, int size = kRasterSize) : m_size(size), m_element(size * size, -1) {
        Point lo = mesh.node(0), hi = mesh.node(0);
        for (const auto &p : mesh.nodes()) {
            lo = lo.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        const Point centre = 0.5 * (lo + hi);
        const double half = 0.5 * std::max(hi.x() - lo.x(), hi.y() - lo.y());
        const double step = 2 * half / size;
        auto pixel_centre = [&](int px, int py) {
            return Point(centre.x() - half + (px + 0.5) * step, centre.y() + half - (py + 0.5) * step);
        };
        // Visit each triangle's pixel bounding box; the lowest element index
        // wins on shared edges.
        for (int k = mesh.num_elements() - 1; k >= 0; --k) {
            const auto &t = mesh.triangle(k);
            const Point &a = mesh.node(t[0]), &b = mesh.node(t[1]), &c = mesh.node(t[2]);
            const Point tlo = a.cwiseMin(b).cwiseMin(c), thi = a.cwiseMax(b).cwiseMax(c);
            const int x0 = std::max(0, static_cast<int>(std::floor((tlo.x() - (centre.x() - half)) / step - 0.5)));
            const int x1 = std::min(size - 1, static_cast<int>(std::ceil((thi.x() - (centre.x() - half)) / step - 0.5)));
            const int y0 = std::max(0, static_cast<int>(std::floor((centre.y() + half - thi.y()) / step - 0.5)));
            const int y1 = std::min(size - 1, static_cast<int>(std::ceil((centre.y() + half - tlo.y()) / step - 0.5)));
            const double area = signed_area(a, b, c);
            const double tol = -1e-12 * area;
            for (int py = y0; py <= y1; ++py)
                for (int px = x0; px <= x1; ++px) {
                    const Point p = pixel_centre(px, py);
                    if (signed_area(a, b, p) >= tol && signed_area(b, c, p) >= tol && signed_area(c, a, p) >= tol)
                        m_element[py * size + px] = k;
                }
        }
    }

    int size() const { return m_size; }
    int element(int px, int py) const { return m_element[py * m_size + px]; }

private:
    int m_size;
    std::vector<int> m_element;
};

inline std::string render_ppm(const Eigen::VectorXd &values, const PixelMap &pixels, std::optional<double> range = {}) {
    const double r = range ? *range : (values.size() ? values.cwiseAbs().maxCoeff() : 0.0);
    const int n = pixels.size();
    std::string out = "P6\n" + std::to_string(n) + " " + std::to_string(n) + "\n255\n";
    out.reserve(out.size() + 3 * static_cast<std::size_t>(n) * n);
    for (int py = 0; py < n; ++py)
        for (int px = 0; px < n; ++px) {
            const int k = pixels.element(px, py);
            const Rgb c = k >= 0 ? diverging_color(values[k], r) : Rgb{255, 255, 255};
            out.append(reinterpret_cast<const char *>(c.data()), 3);
        }
    return out;
}

// range defaults to max |value| of the image.
inline void render_image(const ConductivityImage &image, const Mesh &mesh, const std::string &path,
                         std::optional<double> range = {}) {
    if (image.values.size() != mesh.num_elements())
        throw InvalidArgument("image has " + std::to_string(image.values.size()) + " values for " +
                              std::to_string(mesh.num_elements()) + " elements");
    write_file(path, render_ppm(image.values, PixelMap(mesh), range));
}

} // namespace eitfer
