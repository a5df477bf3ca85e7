#pragma once

#include <string>
#include <string_view>

#include "vaetk/networks.hpp"
#include "vaetk/trainer.hpp"

namespace vaetk {

struct Checkpoint {
  VaeModel model;
  TrainState state;
};

// "VAEC" container: magic, u16 version, architecture spec, seed, parameter
// blobs in declared order (little-endian f64), optimizer state, epoch count
// and resolved lambda.
std::string encode_checkpoint(const VaeModel& model, const TrainState& state);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const VaeModel& model, const TrainState& state, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vaetk
