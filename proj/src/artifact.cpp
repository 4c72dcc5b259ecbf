#include "tscuap/artifact.hpp"

#include <bit>
#include <cmath>
#include <ctime>

#include "tscuap/tiling.hpp"

#ifndef TSCUAP_VERSION
#define TSCUAP_VERSION "0.0.0"
#endif

namespace tscuap {

namespace {

constexpr double kL2Slack = 1e-6;

std::vector<std::uint32_t> dims_of(const Array3& a) {
    return {static_cast<std::uint32_t>(a.h), static_cast<std::uint32_t>(a.w), static_cast<std::uint32_t>(a.c)};
}

Array3 array_from_blob(const TensorBlob& t, const char* section) {
    if (t.dims.size() != 3) {
        throw FormatError(FormatError::Kind::Malformed,
                          std::string(section) + " must have rank 3, got " + std::to_string(t.dims.size()));
    }
    return Array3(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]), t.data);
}

void check_consistency(const Patch& patch, const TileSpec& spec, const NormBudget& budget,
                       const Perturbation& stored) {
    using K = FormatError::Kind;
    if (patch.h() != spec.patch_h() || patch.w() != spec.patch_w()) {
        throw FormatError(K::InvariantViolation, "patch shape does not match alpha and image size");
    }
    const Perturbation expected = tile(patch, spec);
    if (!expected.values().same_shape(stored.values())) {
        throw FormatError(K::InvariantViolation, "perturbation shape differs from the re-tiled patch");
    }
    const auto& a = expected.values().data;
    const auto& b = stored.values().data;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) {
            throw FormatError(K::InvariantViolation,
                              "perturbation differs from the re-tiled patch at flat index " + std::to_string(i));
        }
    }
    const double norm = measure_norm(stored, budget);
    const bool ok = budget.p() == NormKind::Linf ? norm <= budget.epsilon() : norm <= budget.epsilon() + kL2Slack;
    if (!ok) {
        throw FormatError(K::InvariantViolation, "perturbation norm " + std::to_string(norm) +
                                                     " exceeds epsilon " + std::to_string(budget.epsilon()));
    }
}

}  // namespace

std::string toolkit_version() { return TSCUAP_VERSION; }

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Perturbation UapArtifact::perturbation() const { return tile(patch, spec); }

Json artifact_metadata(const TileSpec& spec, const NormBudget& budget, const AttackConfig& config,
                       const std::string& source_model, const std::optional<DatasetSpec>& dataset) {
    Json m;
    m["alpha"] = spec.alpha();
    m["image_h"] = spec.image_h();
    m["image_w"] = spec.image_w();
    m["epsilon"] = budget.epsilon();
    m["norm"] = to_string(budget.p());
    m["source_model"] = source_model;
    m["loss"] = to_string(config.loss());
    m["kappa"] = config.kappa();
    m["target_label"] = config.target_label() ? Json(*config.target_label()) : Json(nullptr);
    m["optimizer"] = to_string(config.step_rule());
    m["step_size"] = config.step_size();
    m["epochs"] = config.epochs();
    m["batch_size"] = config.batch_size();
    m["dataset"] = dataset ? to_json(*dataset) : Json(nullptr);
    m["seed"] = config.seed();
    m["clamp_pixels"] = config.clamp_pixels();
    m["label_source"] = to_string(config.label_source());
    m["init"] = to_string(config.init());
    m["data_free"] = config.data_free();
    m["surrogate"] = config.data_free() ? Json(to_string(config.surrogate())) : Json(nullptr);
    m["created"] = utc_timestamp();
    m["toolkit_version"] = toolkit_version();
    return m;
}

std::string encode_artifact(const Patch& patch, const TileSpec& spec, const NormBudget& budget, Json metadata,
                            const std::optional<Perturbation>& stored) {
    const Perturbation delta = stored ? *stored : tile(patch, spec);
    check_consistency(patch, spec, budget, delta);
    if (!metadata.is_object()) throw ValidationError("artifact metadata must be a JSON object");
    metadata["alpha"] = spec.alpha();
    metadata["image_h"] = spec.image_h();
    metadata["image_w"] = spec.image_w();
    metadata["epsilon"] = budget.epsilon();
    metadata["norm"] = to_string(budget.p());

    const std::string meta = metadata.dump();
    ByteWriter w;
    w.bytes(std::string_view(kArtifactMagic, 4));
    w.u32(kArtifactVersion);
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta);
    const auto pd = dims_of(patch.values());
    w.tensor(pd, patch.values().data);
    const auto dd = dims_of(delta.values());
    w.tensor(dd, delta.values().data);
    return w.buffer();
}

UapArtifact decode_artifact(const std::string& bytes) {
    using K = FormatError::Kind;
    ByteReader r(bytes);
    if (r.bytes(4, "magic") != std::string_view(kArtifactMagic, 4)) {
        throw FormatError(K::BadMagic, "not a UAP artifact (expected magic \"UAP1\")");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kArtifactVersion) {
        throw FormatError(K::UnsupportedVersion, "artifact version " + std::to_string(version) +
                                                     " (supported: " + std::to_string(kArtifactVersion) + ")");
    }
    const std::uint32_t meta_len = r.u32("metadata length");
    const std::string meta_text = r.bytes(meta_len, "metadata");
    Json meta;
    try {
        meta = Json::parse(meta_text);
    } catch (const std::exception& e) {
        throw FormatError(K::Malformed, std::string("metadata is not valid JSON: ") + e.what());
    }
    Array3 patch_values = array_from_blob(r.tensor("patch tensor"), "patch tensor");
    Array3 delta_values = array_from_blob(r.tensor("perturbation tensor"), "perturbation tensor");
    if (!r.at_end()) {
        throw FormatError(K::Malformed, std::to_string(r.remaining()) + " trailing bytes after perturbation tensor");
    }

    try {
        const int alpha = meta.at("alpha").get<int>();
        TileSpec spec(alpha, delta_values.h, delta_values.w);
        NormBudget budget(parse_norm_kind(meta.at("norm").get<std::string>()), meta.at("epsilon").get<double>());
        Patch patch(std::move(patch_values));
        Perturbation stored(std::move(delta_values), PerturbationOrigin::Loaded);
        check_consistency(patch, spec, budget, stored);
        return UapArtifact{std::move(patch), spec, budget, std::move(meta)};
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(K::InvariantViolation, e.what());
    }
}

void save_artifact(const std::string& path, const Patch& patch, const TileSpec& spec, const NormBudget& budget,
                   const Json& metadata, const std::optional<Perturbation>& stored) {
    write_file_atomic(path, encode_artifact(patch, spec, budget, metadata, stored));
}

void save_artifact(const std::string& path, const UapArtifact& a) {
    save_artifact(path, a.patch, a.spec, a.budget, a.metadata);
}

UapArtifact load_artifact(const std::string& path) { return decode_artifact(read_file(path)); }

}  // namespace tscuap
