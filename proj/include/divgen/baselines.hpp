#pragma once

#include <string>

#include "divgen/engine.hpp"

namespace divgen {

/// Comparison generators sharing the gateway and report formats with the
/// engine, so their outputs line up column for column.
struct BaselineSpec {
  std::string kind = "default";  // default | temp | diverse | history |
                                 // hierarchical | subset_select
  double temperature = 2.0;      // temp (and the subset_select universe)
  int history_window = 20;
  int subtopics = 10;            // hierarchical: topics per round, one sample each
  int universe_multiplier = 10;  // subset_select: universe = multiplier * ceil(l/|B|) batches
  std::string diverse_instruction =
      "Make the outputs as diverse as possible: vary the subject matter, "
      "vocabulary, and style across items.";

  void validate() const;
};

/// Runs one baseline to the configured target size. Call counts per kind:
///   default/temp/diverse/history : ceil(l / |B|)
///   hierarchical                 : ceil(l / subtopics) * (1 + subtopics)
///   subset_select                : universe_multiplier * ceil(l / |B|)
RunResult run_baseline(const BaselineSpec& spec, const EngineConfig& config, Gateway& gateway);

}  // namespace divgen
