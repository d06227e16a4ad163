#pragma once

#include <string>

#include "fairattn/training.hpp"

namespace fairattn {

// Versioned JSON persistence for trained models. Parameter values survive
// the round trip bit-for-bit, so a reloaded model predicts identically.
std::string model_to_json_text(const TrainedModel& tm);
TrainedModel model_from_json_text(const std::string& text);

void save_model(const TrainedModel& tm, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace fairattn
