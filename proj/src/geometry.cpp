#include "ssp/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace ssp {

Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
            r(i, j) = s;
        }
    return r;
}

Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
            a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
            a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

Mat3 transpose(const Mat3& a) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) r(i, j) = a(j, i);
    return r;
}

double determinant(const Mat3& a) {
    return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
           a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
           a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

Mat3 inverse(const Mat3& a) {
    const double det = determinant(a);
    if (std::abs(det) < 1e-300) throw ContractError("singular 3x3 matrix");
    Mat3 r;
    r(0, 0) = (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) / det;
    r(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) / det;
    r(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) / det;
    r(1, 0) = (a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2)) / det;
    r(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) / det;
    r(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) / det;
    r(2, 0) = (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0)) / det;
    r(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) / det;
    r(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) / det;
    return r;
}

Homography Homography::from_rowmajor(std::span<const double, 9> values) {
    const double h33 = values[8];
    if (std::abs(h33) < 1e-12)
        throw ContractError("homography h33 is (near) zero, cannot normalize");
    Homography H;
    for (std::size_t i = 0; i < 9; ++i) H.h[i] = values[i] / h33;
    H.h[8] = 1.0;
    Mat3 m;
    std::copy(H.h.begin(), H.h.end(), m.m.begin());
    if (std::abs(determinant(m)) < 1e-12)
        throw ContractError("degenerate homography (zero determinant)");
    return H;
}

Homography Homography::inverse() const {
    Mat3 m;
    std::copy(h.begin(), h.end(), m.m.begin());
    const Mat3 inv = ssp::inverse(m);
    return Homography::from_rowmajor(std::span<const double, 9>(inv.m));
}

bool Homography::is_identity(double tol) const {
    static const Homography id;
    for (std::size_t i = 0; i < 9; ++i)
        if (std::abs(h[i] - id.h[i]) > tol) return false;
    return true;
}

Homography compose(const Homography& a, const Homography& b) {
    Mat3 ma, mb;
    std::copy(a.h.begin(), a.h.end(), ma.m.begin());
    std::copy(b.h.begin(), b.h.end(), mb.m.begin());
    const Mat3 m = ma * mb;
    return Homography::from_rowmajor(std::span<const double, 9>(m.m));
}

Vec2 apply_homography(const Homography& h, double x, double y) {
    const double w = h(2, 0) * x + h(2, 1) * y + h(2, 2);
    if (std::abs(w) < 1e-12)
        throw ContractError("homography maps point to infinity");
    return {(h(0, 0) * x + h(0, 1) * y + h(0, 2)) / w,
            (h(1, 0) * x + h(1, 1) * y + h(1, 2)) / w};
}

Vec3 CameraPose::center() const {
    // x_cam = R x_w + t  =>  C = -R^T t
    const Mat3 rt = transpose(rotation);
    const Vec3 c = rt * translation;
    return {-c.x, -c.y, -c.z};
}

double CameraPose::plane_offset() const {
    return dot(plane_normal, center()) - plane_distance;
}

Vec2 CameraPose::project(const Vec3& world) const {
    const Vec3 cam = rotation * world + translation;
    if (cam.z <= 1e-12) throw ContractError("point behind camera");
    return {fx * cam.x / cam.z + cx, fy * cam.y / cam.z + cy};
}

Vec3 CameraPose::ground_point(double px, double py) const {
    const Vec3 dir_cam{(px - cx) / fx, (py - cy) / fy, 1.0};
    const Vec3 dir_w = transpose(rotation) * dir_cam;
    const Vec3 C = center();
    const double denom = dot(plane_normal, dir_w);
    if (std::abs(denom) < 1e-12)
        throw ContractError("viewing ray parallel to ground plane");
    const double s = (plane_offset() - dot(plane_normal, C)) / denom;
    return C + s * dir_w;
}

void CameraPose::validate() const {
    const Mat3 rrt = rotation * transpose(rotation);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            const double want = i == j ? 1.0 : 0.0;
            if (std::abs(rrt(i, j) - want) > 1e-6)
                throw ContractError("camera rotation is not orthonormal");
        }
    if (std::abs(determinant(rotation) - 1.0) > 1e-6)
        throw ContractError("camera rotation determinant != +1");
    if (!(plane_distance > 0))
        throw ContractError("camera must be strictly off the ground plane");
    const double n2 = dot(plane_normal, plane_normal);
    if (std::abs(n2 - 1.0) > 1e-6)
        throw ContractError("plane normal must be a unit vector");
}

Homography pose_to_homography(const CameraPose& past, const CameraPose& current) {
    past.validate();
    current.validate();
    if (past.fx != current.fx || past.fy != current.fy || past.cx != current.cx ||
        past.cy != current.cy)
        throw ContractError("pose pair must share intrinsics");
    const Vec3 dn = past.plane_normal - current.plane_normal;
    if (std::abs(dn.x) + std::abs(dn.y) + std::abs(dn.z) > 1e-9 ||
        std::abs(past.plane_offset() - current.plane_offset()) > 1e-6)
        throw ContractError("pose pair must share the ground plane");

    // Relative motion past-camera -> current-camera.
    const Mat3 r_rel = current.rotation * transpose(past.rotation);
    const Vec3 t_rel = current.translation - r_rel * past.translation;

    // Plane in the past camera frame: (R_p n)^T x = -d  (d = altitude > 0).
    const Vec3 n_cam = past.rotation * past.plane_normal;
    const double d = past.plane_distance;

    Mat3 metric = r_rel;
    const double tn[3] = {n_cam.x / d, n_cam.y / d, n_cam.z / d};
    const double tv[3] = {t_rel.x, t_rel.y, t_rel.z};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) metric(i, j) -= tv[i] * tn[j];

    Mat3 K;
    K(0, 0) = past.fx;
    K(1, 1) = past.fy;
    K(0, 2) = past.cx;
    K(1, 2) = past.cy;
    const Mat3 Hm = K * metric * inverse(K);
    if (std::abs(Hm(2, 2)) < 1e-9)
        throw ContractError("degenerate viewing geometry (h33 near zero)");
    return Homography::from_rowmajor(std::span<const double, 9>(Hm.m));
}

namespace {

/// Cyclic Jacobi diagonalization of a symmetric 9x9 matrix. Returns
/// eigenvalues in `eig` and eigenvectors as columns of `vecs`.
void jacobi_eigen_9(std::array<double, 81>& a, std::array<double, 9>& eig,
                    std::array<double, 81>& vecs) {
    constexpr std::size_t n = 9;
    vecs.fill(0.0);
    for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
        if (off < 1e-28) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[p * n + p];
                const double aqq = a[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = a[k * n + p];
                    const double akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = a[p * n + k];
                    const double aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = vecs[k * n + p];
                    const double vkq = vecs[k * n + q];
                    vecs[k * n + p] = c * vkp - s * vkq;
                    vecs[k * n + q] = s * vkp + c * vkq;
                }
            }
    }
    for (std::size_t i = 0; i < n; ++i) eig[i] = a[i * n + i];
}

struct Normalization {
    double cx = 0, cy = 0, scale = 1;
};

Normalization hartley(std::span<const Vec2> pts) {
    Normalization t;
    for (const auto& p : pts) {
        t.cx += p.x;
        t.cy += p.y;
    }
    t.cx /= static_cast<double>(pts.size());
    t.cy /= static_cast<double>(pts.size());
    double mean_dist = 0;
    for (const auto& p : pts)
        mean_dist += std::hypot(p.x - t.cx, p.y - t.cy);
    mean_dist /= static_cast<double>(pts.size());
    t.scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    return t;
}

} // namespace

Homography estimate_homography_dlt(std::span<const PointPair> correspondences) {
    const std::size_t n = correspondences.size();
    if (n < 4)
        throw ContractError("homography estimation needs at least 4 points");

    std::vector<Vec2> src(n), dst(n);
    for (std::size_t i = 0; i < n; ++i) {
        src[i] = correspondences[i].src;
        dst[i] = correspondences[i].dst;
    }
    const Normalization ts = hartley(src);
    const Normalization td = hartley(dst);

    // Normal matrix A^T A of the 2n x 9 DLT system, built row by row.
    std::array<double, 81> ata{};
    auto add_row = [&ata](const std::array<double, 9>& r) {
        for (std::size_t i = 0; i < 9; ++i)
            for (std::size_t j = 0; j < 9; ++j) ata[i * 9 + j] += r[i] * r[j];
    };
    for (std::size_t i = 0; i < n; ++i) {
        const double x = (src[i].x - ts.cx) * ts.scale;
        const double y = (src[i].y - ts.cy) * ts.scale;
        const double xp = (dst[i].x - td.cx) * td.scale;
        const double yp = (dst[i].y - td.cy) * td.scale;
        add_row({-x, -y, -1, 0, 0, 0, x * xp, y * xp, xp});
        add_row({0, 0, 0, -x, -y, -1, x * yp, y * yp, yp});
    }

    std::array<double, 9> eig;
    std::array<double, 81> vecs;
    jacobi_eigen_9(ata, eig, vecs);

    std::array<std::size_t, 9> order{0, 1, 2, 3, 4, 5, 6, 7, 8};
    std::sort(order.begin(), order.end(),
              [&eig](std::size_t a, std::size_t b) { return eig[a] < eig[b]; });
    const double ev_max = std::max(eig[order[8]], 1e-30);
    // Rank deficiency beyond the single expected null direction means a
    // degenerate configuration (e.g. collinear points).
    if (eig[order[1]] < 1e-10 * ev_max)
        throw ContractError("degenerate correspondence configuration");

    std::array<double, 9> hn;
    for (std::size_t i = 0; i < 9; ++i) hn[i] = vecs[i * 9 + order[0]];

    // Denormalize: H = Td^{-1} Hn Ts.
    Mat3 m;
    std::copy(hn.begin(), hn.end(), m.m.begin());
    Mat3 Ts = Mat3::identity();
    Ts(0, 0) = ts.scale;
    Ts(1, 1) = ts.scale;
    Ts(0, 2) = -ts.scale * ts.cx;
    Ts(1, 2) = -ts.scale * ts.cy;
    Mat3 Td = Mat3::identity();
    Td(0, 0) = td.scale;
    Td(1, 1) = td.scale;
    Td(0, 2) = -td.scale * td.cx;
    Td(1, 2) = -td.scale * td.cy;
    const Mat3 H = inverse(Td) * m * Ts;
    return Homography::from_rowmajor(std::span<const double, 9>(H.m));
}

Homography homography_at_scale(const Homography& H, double scale) {
    // x_low = x_full / scale - (scale - 1) / (2 scale)
    Mat3 A = Mat3::identity();
    A(0, 0) = 1.0 / scale;
    A(1, 1) = 1.0 / scale;
    A(0, 2) = -(scale - 1.0) / (2.0 * scale);
    A(1, 2) = A(0, 2);
    Mat3 m;
    std::copy(H.h.begin(), H.h.end(), m.m.begin());
    const Mat3 out = A * m * inverse(A);
    return Homography::from_rowmajor(std::span<const double, 9>(out.m));
}

} // namespace ssp
