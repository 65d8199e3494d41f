#pragma once

#include "ntk/model.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace ntk::bench {

struct Preset {
  std::string name;
  ModelConfig model;
  std::string summary;
  /// Reference exact-trace wall time measured on other hardware, seconds; 0
  /// when unknown. Metadata only.
  double reference_exact_seconds = 0.0;
};

const std::vector<Preset>& presets();

/// Throws std::invalid_argument listing the known names.
const Preset& find_preset(std::string_view name);

}  // namespace ntk::bench
