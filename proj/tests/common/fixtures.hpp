#pragma once

#include <vector>

#include "vlltr/datasynth.hpp"

namespace fixture {

// Six samples over three classes, two per band (many, medium, few). Hand
// count: correct, wrong, correct, correct, wrong, wrong.
struct SixSample {
  std::vector<std::size_t> labels{0, 0, 1, 1, 2, 2};
  std::vector<std::size_t> preds{0, 1, 1, 1, 0, 1};
  vlltr::ShotBands bands{vlltr::kManyThreshold, vlltr::kFewThreshold,
                         {vlltr::Band::Many, vlltr::Band::Medium, vlltr::Band::Few}};
};

}  // namespace fixture
