#pragma once

#include <string>
#include <vector>

#include "ebmm/tensor.hpp"

namespace ebmm {

// A checkpoint is a pair of sibling files sharing a stem: `<stem>.json`
// (manifest: entry names, shapes, config digest, iteration) and `<stem>.bin`
// (all parameter values as little-endian f64, concatenated in manifest
// order). Loading restores values bitwise.

struct CheckpointEntry {
  std::string name;
  Tensor tensor;
};

struct CheckpointInfo {
  long iteration = 0;
  std::string config_digest;
};

/// Writes `<stem>.bin` then `<stem>.json`, each atomically (temp + rename).
/// Payload first, so a visible manifest always references a complete payload.
void save_checkpoint(const std::string& stem,
                     const std::vector<CheckpointEntry>& entries,
                     const CheckpointInfo& info);

/// Fills `entries` tensors from the checkpoint at `stem`. The manifest must
/// contain exactly the given entry names with matching shapes (both
/// directions); any missing file, parse failure, or name/shape/length
/// mismatch raises ArtifactError. Returns the stored info; the caller decides
/// whether the config digest must match.
CheckpointInfo load_checkpoint(const std::string& stem,
                               std::vector<CheckpointEntry>& entries);

}  // namespace ebmm
