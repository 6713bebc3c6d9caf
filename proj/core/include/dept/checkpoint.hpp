#pragma once

#include <memory>
#include <string>

#include "dept/encoder.hpp"

namespace dept {

inline constexpr int kCheckpointVersion = 1;

/// Writes the model (config, mean speed, every named parameter with its
/// shape) as a versioned JSON document.
void save_checkpoint(const DeptModel& model, const std::string& path);

/// Rebuilds a model from a checkpoint; the graph must match the node count
/// recorded at save time.
std::unique_ptr<DeptModel> load_checkpoint(const std::string& path, const CpsGraph& graph);

}  // namespace dept
