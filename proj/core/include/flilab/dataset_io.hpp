#pragma once

#include <string>

#include "flilab/simulate.hpp"

namespace flilab {

/// FLD1 layout: magic, version u32, N, H, W, G u32, flags u32 (bit 0 mask,
/// bit 1 truth), then float32 little-endian stacks tpsf, irf, tau1, tau2,
/// a_r, mask.
///
/// The container has no room for the time axis or provenance, so a JSON
/// sidecar `<path>.json` carries the generation config and seed whenever
/// the dataset has them. Without a sidecar the axis defaults to 40 ps gates
/// starting at 0 ps.
void save_dataset(const FliDataset& ds, const std::string& path);
FliDataset load_dataset(const std::string& path);

std::string sidecar_path(const std::string& path);

}  // namespace flilab
