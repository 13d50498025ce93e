#pragma once

#include "pifm/analytics.hpp"
#include "pifm/io.hpp"

namespace pifm::scenarios {

std::vector<std::string> names();

/// Full pipeline for a named scenario: resolve config (defaults + overrides),
/// train the model(s) (or load them from cache_dir when a matching checkpoint
/// exists), run the scenario's metric battery, write artifacts (checkpoints,
/// loss CSVs, metrics JSON/CSV, SVG panels, manifest) into out_dir, and
/// return the metrics document.
nlohmann::json run(const std::string& name, std::uint64_t seed,
                   const Config& overrides, const std::string& out_dir,
                   const std::string& cache_dir = "");

/// Metric battery only, on a caller-supplied checkpoint (cmd_eval).
nlohmann::json evaluate(const std::string& name, const ModelParams& params,
                        std::uint64_t seed, const Config& overrides,
                        const std::string& out_dir);

}  // namespace pifm::scenarios
