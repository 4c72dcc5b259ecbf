#include "tscuap/tiling.hpp"

#include <algorithm>
#include <cmath>

namespace tscuap {

namespace {

void check_patch_matches(const Patch& v, const TileSpec& spec) {
    if (v.h() != spec.patch_h() || v.w() != spec.patch_w()) {
        throw ShapeError("patch shape (" + std::to_string(v.h()) + ", " + std::to_string(v.w()) +
                         ") does not match tile spec patch shape (" +
                         std::to_string(spec.patch_h()) + ", " + std::to_string(spec.patch_w()) +
                         ")");
    }
}

double l2_norm(std::span<const float> values) {
    double sum = 0.0;
    for (float v : values) sum += static_cast<double>(v) * v;
    return std::sqrt(sum);
}

}  // namespace

Perturbation tile(const Patch& v, const TileSpec& spec) {
    check_patch_matches(v, spec);
    const Array3& p = v.values();
    auto values = tile_values<float>(p.data, p.h, p.w, p.c, spec.alpha());
    return Perturbation(Array3(spec.image_h(), spec.image_w(), p.c, std::move(values)),
                        PerturbationOrigin::Tiled);
}

Array3 tile_adjoint(const Array3& image_grad, const TileSpec& spec) {
    if (image_grad.h != spec.image_h() || image_grad.w != spec.image_w()) {
        throw ShapeError("image gradient shape does not match tile spec");
    }
    auto values = untile_sum<float>(image_grad.data, spec.patch_h(), spec.patch_w(), image_grad.c,
                                    spec.alpha());
    return Array3(spec.patch_h(), spec.patch_w(), image_grad.c, std::move(values));
}

double measure_norm(const Array3& values, NormKind p) {
    if (p == NormKind::Linf) {
        float m = 0.0f;
        for (float v : values.data) m = std::max(m, std::abs(v));
        return m;
    }
    return l2_norm(values.data);
}

double measure_norm(const Perturbation& delta, const NormBudget& budget) {
    return measure_norm(delta.values(), budget.p());
}

Patch project_linf(const Patch& v, double epsilon) {
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    const float hi = float_at_most(epsilon);
    Array3 out = v.values();
    for (float& x : out.data) x = std::clamp(x, -hi, hi);
    return Patch(std::move(out));
}

Patch project_l2(const Patch& v, const TileSpec& spec, double epsilon) {
    if (!(epsilon > 0.0)) throw ValidationError("epsilon must be positive");
    check_patch_matches(v, spec);
    const double alpha = spec.alpha();
    double tiled = alpha * l2_norm(v.values().data);
    if (tiled <= epsilon) return v;

    Array3 out = v.values();
    const Array3& src = v.values();
    double scale = epsilon / tiled;
    // float rounding can leave the result a hair outside the sphere; shrink
    // until the measured tiled norm is inside.
    for (int attempt = 0; attempt < 64; ++attempt) {
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            out.data[i] = static_cast<float>(src.data[i] * scale);
        }
        if (alpha * l2_norm(out.data) <= epsilon) break;
        scale *= 1.0 - 1e-7;
    }
    return Patch(std::move(out));
}

Patch project(const Patch& v, const TileSpec& spec, const NormBudget& budget) {
    if (budget.p() == NormKind::Linf) return project_linf(v, budget.epsilon());
    return project_l2(v, spec, budget.epsilon());
}

Array3 resize_bilinear(const Array3& src, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw ValidationError("resize dimensions must be positive");
    if (src.h == out_h && src.w == out_w) return src;

    struct Tap {
        int lo, hi;
        float t;
    };
    auto taps = [](int in, int out) {
        std::vector<Tap> result(out);
        const double scale = static_cast<double>(in) / out;
        for (int d = 0; d < out; ++d) {
            double s = (d + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(in - 1));
            int lo = static_cast<int>(std::floor(s));
            int hi = std::min(lo + 1, in - 1);
            result[d] = {lo, hi, static_cast<float>(s - lo)};
        }
        return result;
    };
    const auto ty = taps(src.h, out_h);
    const auto tx = taps(src.w, out_w);

    Array3 out(out_h, out_w, src.c);
    for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
            for (int k = 0; k < src.c; ++k) {
                // lerp form keeps constants exact
                float a = src(ty[i].lo, tx[j].lo, k);
                float b = src(ty[i].lo, tx[j].hi, k);
                float c = src(ty[i].hi, tx[j].lo, k);
                float d = src(ty[i].hi, tx[j].hi, k);
                float top = a + tx[j].t * (b - a);
                float bottom = c + tx[j].t * (d - c);
                out(i, j, k) = top + ty[i].t * (bottom - top);
            }
        }
    }
    return out;
}

Perturbation resize_perturbation(const Perturbation& delta, int out_h, int out_w,
                                 std::optional<double> linf_epsilon) {
    Array3 out = resize_bilinear(delta.values(), out_h, out_w);
    if (linf_epsilon) {
        const float hi = float_at_most(*linf_epsilon);
        for (float& x : out.data) x = std::clamp(x, -hi, hi);
    }
    return Perturbation(std::move(out), PerturbationOrigin::Resized);
}

// ---------------------------------------------------------------------------

namespace {

struct MaskName {
    MaskKind kind;
    const char* name;
};

constexpr MaskName kMaskNames[] = {
    {MaskKind::TopLeft, "top_left"},       {MaskKind::TopRight, "top_right"},
    {MaskKind::BottomLeft, "bottom_left"}, {MaskKind::BottomRight, "bottom_right"},
    {MaskKind::Center, "center"},          {MaskKind::Round, "round"},
    {MaskKind::Top, "top"},                {MaskKind::Bottom, "bottom"},
    {MaskKind::Left, "left"},              {MaskKind::Right, "right"},
    {MaskKind::Full, "full"},
};

bool is_corner(MaskKind kind) {
    return kind == MaskKind::TopLeft || kind == MaskKind::TopRight ||
           kind == MaskKind::BottomLeft || kind == MaskKind::BottomRight;
}

}  // namespace

std::string to_string(MaskKind kind) {
    for (const auto& m : kMaskNames) {
        if (m.kind == kind) return m.name;
    }
    return "unknown";
}

MaskKind parse_mask_kind(const std::string& text) {
    static const std::pair<const char*, MaskKind> aliases[] = {
        {"tl", MaskKind::TopLeft}, {"tr", MaskKind::TopRight},
        {"bl", MaskKind::BottomLeft}, {"br", MaskKind::BottomRight}};
    for (const auto& m : kMaskNames) {
        if (text == m.name) return m.kind;
    }
    for (const auto& [alias, kind] : aliases) {
        if (text == alias) return kind;
    }
    throw ValidationError("unknown mask region '" + text + "'");
}

MaskRegion::MaskRegion(MaskKind kind, TileSpec grid) : kind_(kind), grid_(grid) {
    const int a = grid_.alpha();
    if (is_corner(kind_) && a % 2 != 0) {
        throw ValidationError("corner regions need an even alpha, got " + std::to_string(a));
    }
    if ((kind_ == MaskKind::Center || kind_ == MaskKind::Round) && (a < 4 || a % 4 != 0)) {
        throw ValidationError("center/round regions need alpha >= 4 with a centred (alpha/2)^2 "
                              "block set, got alpha=" + std::to_string(a));
    }
}

bool MaskRegion::selects(int r, int c) const {
    const int a = grid_.alpha();
    const int half = a / 2;
    switch (kind_) {
        case MaskKind::Full: return true;
        case MaskKind::TopLeft: return r < half && c < half;
        case MaskKind::TopRight: return r < half && c >= half;
        case MaskKind::BottomLeft: return r >= half && c < half;
        case MaskKind::BottomRight: return r >= half && c >= half;
        case MaskKind::Center: {
            const int lo = a / 4;
            const int hi = lo + half;
            return r >= lo && r < hi && c >= lo && c < hi;
        }
        case MaskKind::Round: {
            const int lo = a / 4;
            const int hi = lo + half;
            return !(r >= lo && r < hi && c >= lo && c < hi);
        }
        case MaskKind::Top: return r == 0;
        case MaskKind::Bottom: return r == a - 1;
        case MaskKind::Left: return c == 0;
        case MaskKind::Right: return c == a - 1;
    }
    return false;
}

Perturbation mask_blocks(const Perturbation& delta, const MaskRegion& region) {
    const TileSpec& g = region.grid();
    if (delta.h() != g.image_h() || delta.w() != g.image_w()) {
        throw ShapeError("mask grid (" + std::to_string(g.image_h()) + "x" +
                         std::to_string(g.image_w()) + ") is incompatible with perturbation (" +
                         std::to_string(delta.h()) + "x" + std::to_string(delta.w()) + ")");
    }
    Array3 out = delta.values();
    const int bh = g.patch_h();
    const int bw = g.patch_w();
    for (int i = 0; i < out.h; ++i) {
        for (int j = 0; j < out.w; ++j) {
            if (region.selects(i / bh, j / bw)) continue;
            for (int k = 0; k < out.c; ++k) out(i, j, k) = 0.0f;
        }
    }
    return Perturbation(std::move(out), PerturbationOrigin::Masked);
}

}  // namespace tscuap
