#pragma once

#include <filesystem>
#include <vector>

#include "stratmed/autograd.hpp"

namespace stratmed {

// Length-prefixed named-tensor container, little-endian:
//   magic "SMCK" | u32 version=1 | u64 tensor count
//   per tensor: u32 name length | name bytes | u32 rank | u64 dims | f64 values
// Writing the same parameters twice yields byte-identical files.
void save_checkpoint(const std::vector<Parameter*>& params,
                     const std::filesystem::path& file);

// Restores values into an existing parameter list; names, order, and shapes
// must match the file exactly.
void load_checkpoint(const std::vector<Parameter*>& params,
                     const std::filesystem::path& file);

// Text manifest: one "name dim0xdim1..." line per tensor, file order.
void write_checkpoint_manifest(const std::vector<Parameter*>& params,
                               const std::filesystem::path& file);

}  // namespace stratmed
