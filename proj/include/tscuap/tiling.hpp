#pragma once

// The tile operator, its adjoint, norm measurement/projection onto the
// budget, cross-resolution resizing and block masks on the tile grid.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tscuap/core.hpp"

namespace tscuap {

/// Raw tile kernel: out[i, j, k] = patch[i mod ph, j mod pw, k] for an
/// (alpha*ph, alpha*pw, c) output.
template <typename T>
std::vector<T> tile_values(std::span<const T> patch, int ph, int pw, int c, int alpha) {
    const int out_w = pw * alpha;
    const std::size_t row = static_cast<std::size_t>(pw) * c;
    std::vector<T> out(static_cast<std::size_t>(ph) * alpha * out_w * c);
    T* dst = out.data();
    for (int bi = 0; bi < alpha; ++bi) {
        for (int i = 0; i < ph; ++i) {
            const T* src = patch.data() + i * row;
            for (int bj = 0; bj < alpha; ++bj) {
                std::copy(src, src + row, dst);
                dst += row;
            }
        }
    }
    return out;
}

/// Adjoint of tile_values: sums an image-sized gradient over the alpha^2
/// blocks into a patch-sized gradient.
template <typename T>
std::vector<T> untile_sum(std::span<const T> image, int ph, int pw, int c, int alpha) {
    const int img_w = pw * alpha;
    std::vector<T> out(static_cast<std::size_t>(ph) * pw * c, T(0));
    for (int i = 0; i < ph * alpha; ++i) {
        T* dst_row = out.data() + static_cast<std::size_t>(i % ph) * pw * c;
        const T* src_row = image.data() + static_cast<std::size_t>(i) * img_w * c;
        for (int j = 0; j < img_w; ++j) {
            T* dst = dst_row + static_cast<std::size_t>(j % pw) * c;
            const T* src = src_row + static_cast<std::size_t>(j) * c;
            for (int k = 0; k < c; ++k) dst[k] += src[k];
        }
    }
    return out;
}

/// delta = T(v, alpha). Throws ShapeError when the patch does not match spec.
Perturbation tile(const Patch& v, const TileSpec& spec);

/// Gradient w.r.t. the patch given a gradient w.r.t. the tiled perturbation.
Array3 tile_adjoint(const Array3& image_grad, const TileSpec& spec);

double measure_norm(const Array3& values, NormKind p);
double measure_norm(const Perturbation& delta, const NormBudget& budget);

/// Elementwise clamp to [-eps, eps].
Patch project_linf(const Patch& v, double epsilon);

/// Rescales v so that the tiled perturbation has L2 norm at most eps.
/// The tiled norm is alpha * ||v||_2.
Patch project_l2(const Patch& v, const TileSpec& spec, double epsilon);

/// Dispatches on the budget's norm.
Patch project(const Patch& v, const TileSpec& spec, const NormBudget& budget);

/// Bilinear resize (half-pixel centres). When `linf_epsilon` is set the
/// result is re-clamped to that box; for an L-inf bounded source this is a
/// no-op because bilinear weights form a convex combination.
Perturbation resize_perturbation(const Perturbation& delta, int out_h, int out_w,
                                 std::optional<double> linf_epsilon = std::nullopt);

/// Bilinear resize of an HWC array, shared by perturbation and image resizing.
Array3 resize_bilinear(const Array3& src, int out_h, int out_w);

enum class MaskKind {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
    Round,
    Top,
    Bottom,
    Left,
    Right,
    Full
};

std::string to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& text);

/// A subset of the alpha x alpha blocks of a tile grid.
///
///   corners      one quadrant of blocks; alpha must be even
///   center       the central (alpha/2)^2 blocks; alpha must be a multiple of 4
///   round        complement of center
///   top/bottom   first/last block row
///   left/right   first/last block column
///   full         every block
class MaskRegion {
public:
    MaskRegion(MaskKind kind, TileSpec grid);

    MaskKind kind() const { return kind_; }
    const TileSpec& grid() const { return grid_; }
    bool selects(int block_row, int block_col) const;

private:
    MaskKind kind_;
    TileSpec grid_;
};

/// Zeroes every entry outside the selected blocks.
Perturbation mask_blocks(const Perturbation& delta, const MaskRegion& region);

}  // namespace tscuap
