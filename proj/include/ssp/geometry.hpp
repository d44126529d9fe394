#pragma once

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "ssp/ops.hpp"
#include "ssp/tensor.hpp"

namespace ssp {

struct Vec2 {
    double x = 0, y = 0;
};

struct Vec3 {
    double x = 0, y = 0, z = 0;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

/// Row-major 3x3 matrix, double precision. Geometry math stays in 64-bit;
/// only tensor payloads are 32-bit.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }
    double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }

    static Mat3 identity() { return {}; }
};

Mat3 operator*(const Mat3& a, const Mat3& b);
Vec3 operator*(const Mat3& a, const Vec3& v);
Mat3 transpose(const Mat3& a);
double determinant(const Mat3& a);
Mat3 inverse(const Mat3& a);

/// 3x3 projective transform on pixel coordinates, normalized so the
/// bottom-right entry is exactly 1. Throughout the pipeline, H maps
/// past-frame coordinates to current-frame coordinates.
struct Homography {
    std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double operator()(std::size_t r, std::size_t c) const { return h[r * 3 + c]; }
    double& operator()(std::size_t r, std::size_t c) { return h[r * 3 + c]; }

    static Homography identity() { return {}; }

    /// Builds from 9 row-major values, rescaling so h33 == 1.
    static Homography from_rowmajor(std::span<const double, 9> values);

    Homography inverse() const;
    bool is_identity(double tol = 0.0) const;
};

Homography compose(const Homography& a, const Homography& b);

/// Applies H to a point. Throws ContractError when the homogeneous
/// denominator is within 1e-12 of zero (point at infinity).
Vec2 apply_homography(const Homography& h, double x, double y);

/// Camera above a planar ground scene.
///
/// rotation/translation map world to camera coordinates: x_cam = R x_w + t.
/// plane_normal is the unit normal of the ground plane in world coordinates,
/// oriented toward the camera side; plane_distance is the distance from this
/// camera's center to the plane (the altitude), which must be positive. The
/// world plane itself is recovered as { X : n . X = n . C - d }.
struct CameraPose {
    Mat3 rotation;
    Vec3 translation;
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Vec3 plane_normal{0, 0, 1};
    double plane_distance = 1;

    Vec3 center() const; // camera center in world coordinates
    /// World offset of the shared ground plane: n . X = plane_offset().
    double plane_offset() const;
    /// Projects a world point to pixel coordinates.
    Vec2 project(const Vec3& world) const;
    /// Intersects the pixel's viewing ray with the ground plane.
    Vec3 ground_point(double px, double py) const;

    void validate() const;
};

/// Planar-scene homography mapping past-frame pixels to current-frame pixels:
/// H = K (R_rel - t_rel n^T / d) K^{-1} with n the plane normal in the past
/// camera frame and d the past camera's distance to the plane.
Homography pose_to_homography(const CameraPose& past, const CameraPose& current);

/// One point correspondence (x, y) -> (x', y') between two images.
struct PointPair {
    Vec2 src;
    Vec2 dst;
};

/// Normalized DLT: Hartley normalization on both point sets, least-squares
/// null vector of the 2n x 9 system via an orthogonal diagonalization of the
/// normal matrix, then denormalization and h33 = 1 scaling. Exact for
/// noise-free correspondences; throws on < 4 points or a degenerate
/// configuration (e.g. 3 collinear source points).
Homography estimate_homography_dlt(std::span<const PointPair> correspondences);

/// Resamples `input` into the current frame: output(y, x) is the bilinear
/// sample of the input at H^{-1}(x, y). The inverse mapping leaves no holes.
/// The mask is 1 where the source sample was valid and 0 where the fill value
/// was used.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> warp_homography(const TensorT<T>& input,
                                                  const Homography& H, T fill) {
    if (input.rank() != 3) throw ContractError("warp_homography expects rank 3");
    const Homography inv = H.inverse();
    TensorT<T> out(input.dims(), input.tag());
    TensorT<T> mask = TensorT<T>::chw(1, input.height(), input.width(), Tag::mask);
    std::vector<T> vals(input.channels());
    for (std::size_t y = 0; y < input.height(); ++y)
        for (std::size_t x = 0; x < input.width(); ++x) {
            const Vec2 src = apply_homography(inv, static_cast<double>(x),
                                              static_cast<double>(y));
            const bool ok = detail::sample_bilinear(input, src.x, src.y, fill,
                                                    vals.data());
            for (std::size_t c = 0; c < input.channels(); ++c)
                out.at(c, y, x) = vals[c];
            mask.at(0, y, x) = ok ? T(1) : T(0);
        }
    return {std::move(out), std::move(mask)};
}

/// Gradient of warp_homography w.r.t. the input values (the warp is linear in
/// them): scatters the upstream gradient with the same bilinear weights.
template <typename T>
TensorT<T> warp_homography_backward(const std::vector<std::size_t>& in_dims,
                                    const Homography& H,
                                    const TensorT<T>& upstream) {
    const Homography inv = H.inverse();
    TensorT<T> dinput(in_dims, upstream.tag());
    std::vector<T> g(upstream.channels());
    for (std::size_t y = 0; y < upstream.height(); ++y)
        for (std::size_t x = 0; x < upstream.width(); ++x) {
            const Vec2 src = apply_homography(inv, static_cast<double>(x),
                                              static_cast<double>(y));
            for (std::size_t c = 0; c < upstream.channels(); ++c)
                g[c] = upstream.at(c, y, x);
            detail::scatter_bilinear(dinput, src.x, src.y, g.data());
        }
    return dinput;
}

/// Conjugates a full-resolution homography to a grid downscaled by `scale`
/// (pixel centers aligned: x_low = (x_full + 0.5)/scale - 0.5).
Homography homography_at_scale(const Homography& H, double scale);

} // namespace ssp
