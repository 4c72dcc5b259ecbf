#pragma once

// PNG renderings of perturbations and perturbed samples.

#include <string>
#include <vector>

#include "tscuap/artifact.hpp"
#include "tscuap/core.hpp"
#include "tscuap/datasets.hpp"

namespace tscuap {

/// Per-image min-max rescale to [0, 255]. A constant input maps to mid-gray
/// (128) everywhere.
std::vector<std::uint8_t> rescale_for_display(const Array3& values, double* lo = nullptr, double* hi = nullptr);

struct VisualsOptions {
    int max_pairs = 8;
    std::string stem = "uap";
};

/// Writes <stem>.png (rescaled perturbation), <stem>.json (sidecar with the
/// rescale parameters) and, when `samples` is given, clean_<i>.png and
/// perturbed_<i>.png for up to max_pairs images. Returns the written paths.
std::vector<std::string> render_visuals(const UapArtifact& artifact, const SampledDataset* samples,
                                        const std::string& out_dir, const VisualsOptions& options = {});

}  // namespace tscuap
