#pragma once
// Voxel tensor fields: the DWTF binary format, nearest-voxel sampling and
// synthetic generators.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "haptoflow/errors.hpp"
#include "haptoflow/grid.hpp"

namespace haptoflow {

inline constexpr char kDwtfMagic[4] = {'D', 'W', 'T', 'F'};
inline constexpr std::uint16_t kDwtfVersion = 1;
inline constexpr std::size_t kDwtfHeaderBytes = 4 + 2 + 3 * 4 + 3 * 8 + 16;
inline constexpr std::size_t kDwtfVoxelBytes = 6 * 8;

/// Water diffusion tensors on a voxel lattice, x index fastest. Voxel (i,j,k)
/// covers [i, i+1) * spacing(0) etc. relative to the field origin.
struct TensorField {
    std::array<std::uint32_t, 3> dims{1, 1, 1};
    Eigen::Vector3d spacing = Eigen::Vector3d::Ones();
    std::string units = "mm";
    std::vector<Eigen::Matrix3d> tensors;

    std::size_t voxel_count() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }
    std::size_t index(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        return (static_cast<std::size_t>(k) * dims[1] + j) * dims[0] + i;
    }
    const Eigen::Matrix3d& at(std::uint32_t i, std::uint32_t j, std::uint32_t k) const { return tensors[index(i, j, k)]; }
    Eigen::Vector3d extent() const {
        return Eigen::Vector3d(dims[0] * spacing(0), dims[1] * spacing(1), dims[2] * spacing(2));
    }
    /// Tensor of the voxel containing x (clamped to the lattice).
    const Eigen::Matrix3d& nearest(const Eigen::Vector3d& x) const {
        std::array<std::uint32_t, 3> ijk{};
        for (int d = 0; d < 3; ++d) {
            const double f = std::floor(x(d) / spacing(d));
            const double hi = static_cast<double>(dims[d]) - 1.0;
            ijk[d] = static_cast<std::uint32_t>(std::clamp(f, 0.0, hi));
        }
        return at(ijk[0], ijk[1], ijk[2]);
    }
};

enum class SpdPolicy { reject, clamp };

namespace detail {

template <class T>
void put_le(std::string& out, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t off) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, in.data() + off, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

}  // namespace detail

/// Symmetric eigenvalue floor at `floor`; returns true when anything changed.
inline bool clamp_spd(Eigen::Matrix3d& A, double floor = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(0.5 * (A + A.transpose()));
    Eigen::Vector3d ev = es.eigenvalues();
    if (ev.minCoeff() >= floor) return false;
    ev = ev.cwiseMax(floor);
    A = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
    return true;
}

inline std::string encode_dwtf(const TensorField& f) {
    if (f.tensors.size() != f.voxel_count()) throw ValidationError("tensor field: voxel count does not match dims");
    if (f.units.size() > 16) throw ValidationError("tensor field: units string longer than 16 bytes");
    std::string out;
    out.reserve(kDwtfHeaderBytes + f.voxel_count() * kDwtfVoxelBytes);
    out.append(kDwtfMagic, 4);
    detail::put_le<std::uint16_t>(out, kDwtfVersion);
    for (auto d : f.dims) detail::put_le<std::uint32_t>(out, d);
    for (int d = 0; d < 3; ++d) detail::put_le<double>(out, f.spacing(d));
    std::string units = f.units;
    units.resize(16, '\0');
    out += units;
    for (const auto& T : f.tensors) {
        for (double v : {T(0, 0), T(1, 1), T(2, 2), T(0, 1), T(0, 2), T(1, 2)}) detail::put_le<double>(out, v);
    }
    return out;
}

inline TensorField decode_dwtf(const std::string& bytes, SpdPolicy policy = SpdPolicy::reject) {
    if (bytes.size() < kDwtfHeaderBytes)
        throw ValidationError("DWTF: truncated header at byte offset " + std::to_string(bytes.size()));
    if (std::memcmp(bytes.data(), kDwtfMagic, 4) != 0) throw ValidationError("DWTF: bad magic at byte offset 0");
    const auto version = detail::get_le<std::uint16_t>(bytes, 4);
    if (version != kDwtfVersion)
        throw ValidationError("DWTF: unsupported version " + std::to_string(version) + " at byte offset 4");
    TensorField f;
    std::size_t off = 6;
    for (int d = 0; d < 3; ++d, off += 4) {
        f.dims[d] = detail::get_le<std::uint32_t>(bytes, off);
        if (f.dims[d] == 0) throw ValidationError("DWTF: zero dimension at byte offset " + std::to_string(off));
    }
    for (int d = 0; d < 3; ++d, off += 8) {
        f.spacing(d) = detail::get_le<double>(bytes, off);
        if (!(f.spacing(d) > 0.0) || !std::isfinite(f.spacing(d)))
            throw ValidationError("DWTF: non-positive spacing at byte offset " + std::to_string(off));
    }
    f.units.assign(bytes.data() + off, 16);
    f.units.resize(std::strlen(f.units.c_str()));
    off += 16;
    const std::size_t n = f.voxel_count();
    const std::size_t need = kDwtfHeaderBytes + n * kDwtfVoxelBytes;
    if (bytes.size() < need) {
        const std::size_t voxel = (bytes.size() - kDwtfHeaderBytes) / kDwtfVoxelBytes;
        throw ValidationError("DWTF: truncated payload at byte offset " +
                              std::to_string(kDwtfHeaderBytes + voxel * kDwtfVoxelBytes) + " (voxel " +
                              std::to_string(voxel) + " of " + std::to_string(n) + ")");
    }
    f.tensors.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
        double c[6];
        for (int i = 0; i < 6; ++i, off += 8) {
            c[i] = detail::get_le<double>(bytes, off);
            if (!std::isfinite(c[i]))
                throw ValidationError("DWTF: non-finite value at byte offset " + std::to_string(off));
        }
        Eigen::Matrix3d T;
        T << c[0], c[3], c[4], c[3], c[1], c[5], c[4], c[5], c[2];
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(T, Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() <= 0.0) {
            if (policy == SpdPolicy::reject)
                throw ValidationError("DWTF: voxel " + std::to_string(v) + " is not positive definite (byte offset " +
                                      std::to_string(off - kDwtfVoxelBytes) + ")");
            clamp_spd(T);
        }
        f.tensors[v] = T;
    }
    return f;
}

inline void write_dwtf(const std::string& path, const TensorField& f) {
    const std::string bytes = encode_dwtf(f);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("cannot open " + path + " for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw RuntimeFailure("write failed: " + path);
}

inline TensorField read_dwtf(const std::string& path, SpdPolicy policy = SpdPolicy::reject) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open tensor file " + path);
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_dwtf(bytes, policy);
}

// ---------------------------------------------------------------------------
// Synthetic fields

inline TensorField make_field(std::array<std::uint32_t, 3> dims, const Eigen::Vector3d& spacing,
                              const std::function<Eigen::Matrix3d(const Eigen::Vector3d&)>& at_center) {
    TensorField f;
    f.dims = dims;
    f.spacing = spacing;
    f.tensors.resize(f.voxel_count());
    for (std::uint32_t k = 0; k < dims[2]; ++k)
        for (std::uint32_t j = 0; j < dims[1]; ++j)
            for (std::uint32_t i = 0; i < dims[0]; ++i) {
                const Eigen::Vector3d c((i + 0.5) * spacing(0), (j + 0.5) * spacing(1), (k + 0.5) * spacing(2));
                f.tensors[f.index(i, j, k)] = at_center(c);
            }
    return f;
}

inline TensorField constant_field(std::array<std::uint32_t, 3> dims, const Eigen::Vector3d& spacing,
                                  const Eigen::Matrix3d& D) {
    return make_field(dims, spacing, [&](const Eigen::Vector3d&) { return D; });
}

/// Two perpendicular fiber bundles crossing at the centre of the slab: one along x
/// (centred in y), one along y (centred in x). Each adds `strength` along its axis,
/// with a Gaussian cross-section of width `width`.
inline TensorField fiber_cross_field(std::array<std::uint32_t, 3> dims, const Eigen::Vector3d& spacing,
                                     double strength = 4.0, double width = 4.0) {
    if (!(strength >= 0.0) || !(width > 0.0)) throw ValidationError("fiber cross: need strength >= 0 and width > 0");
    const Eigen::Vector3d mid = 0.5 * Eigen::Vector3d(dims[0] * spacing(0), dims[1] * spacing(1), dims[2] * spacing(2));
    return make_field(dims, spacing, [=](const Eigen::Vector3d& x) {
        const double wx = std::exp(-std::pow((x(1) - mid(1)) / width, 2));
        const double wy = std::exp(-std::pow((x(0) - mid(0)) / width, 2));
        Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
        D(0, 0) += strength * wx;
        D(1, 1) += strength * wy;
        return D;
    });
}

/// Water tensors for every primal cell of `grid`, sampled at cell centres scaled by `length_scale`
/// (grid units to field units).
inline std::vector<Eigen::Matrix3d> sample_cells(const TensorField& f, const Grid& grid, double length_scale = 1.0) {
    std::vector<Eigen::Matrix3d> out(grid.cell_count());
    for (int j = 0; j < grid.cell_count(); ++j) out[j] = f.nearest(length_scale * grid.cell_center(j));
    return out;
}

}  // namespace haptoflow
