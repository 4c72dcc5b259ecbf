#pragma once

// UAP artifact files.
//
// Layout (little-endian):
//   "UAP1" | u32 version = 1 | u32 metadata length | UTF-8 JSON metadata
//   | patch tensor | perturbation tensor
// where a tensor is u32 rank, u32 dims..., float32 row-major data.
// Both tensors are HWC. The perturbation must equal the re-tiled patch bit
// for bit and satisfy the stored budget; this is checked on save and load.

#include <optional>
#include <string>

#include "tscuap/binio.hpp"
#include "tscuap/core.hpp"

namespace tscuap {

inline constexpr char kArtifactMagic[] = "UAP1";
inline constexpr std::uint32_t kArtifactVersion = 1;

std::string toolkit_version();
/// ISO-8601 UTC timestamp, second resolution.
std::string utc_timestamp();

struct UapArtifact {
    Patch patch;
    TileSpec spec;
    NormBudget budget;
    Json metadata;

    Perturbation perturbation() const;
};

/// Provenance record for a crafted patch. `dataset` is null for data-free runs.
Json artifact_metadata(const TileSpec& spec, const NormBudget& budget, const AttackConfig& config,
                       const std::string& source_model, const std::optional<DatasetSpec>& dataset);

/// Serializes to bytes. alpha, epsilon and norm in `metadata` are
/// overwritten from `spec` and `budget`. `stored` defaults to tile(patch);
/// passing anything else is refused with an invariant violation.
std::string encode_artifact(const Patch& patch, const TileSpec& spec, const NormBudget& budget, Json metadata,
                            const std::optional<Perturbation>& stored = std::nullopt);
UapArtifact decode_artifact(const std::string& bytes);

void save_artifact(const std::string& path, const Patch& patch, const TileSpec& spec, const NormBudget& budget,
                   const Json& metadata, const std::optional<Perturbation>& stored = std::nullopt);
void save_artifact(const std::string& path, const UapArtifact& artifact);
UapArtifact load_artifact(const std::string& path);

}  // namespace tscuap
