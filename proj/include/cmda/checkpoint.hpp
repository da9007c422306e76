#pragma once

#include <string>

#include "cmda/models.hpp"
#include "cmda/optim.hpp"

namespace cmda {

// Plain-text header ("cmda-checkpoint v1" / "cmda-optim v1") followed by a
// little-endian float32 payload in tensor manifest order. Saving the same
// state twice yields byte-identical files.
void save_params(const std::string& path, const ModelParams& params);
ModelParams load_params(const std::string& path);

void save_optim(const std::string& path, const OptimState& state);
OptimState load_optim(const std::string& path);

}  // namespace cmda
