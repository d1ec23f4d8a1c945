#pragma once

#include <map>
#include <string>
#include <vector>

#include "tinydetr/tensor.hpp"

namespace tinydetr {

struct CheckpointEntry {
    Shape shape;
    std::vector<double> values;
};

// A checkpoint is a flat name -> tensor map. Model weights are stored under
// their parameter names, optimizer moments under "adam.<param>.m/.v", trainer
// counters under "trainer.*", and config fields under "config.<key>" so a
// checkpoint is self-describing.
using Checkpoint = std::map<std::string, CheckpointEntry>;

// Binary layout (little-endian): magic "TDCP", u32 version, u32 entry count,
// then per entry: u32 name length, name bytes, u32 rank, rank x u64 dims,
// payload as f64. Entries are written in name order.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

// Helpers for scalar entries (counters, config fields).
void put_scalar(Checkpoint& checkpoint, const std::string& name, double value);
double get_scalar(const Checkpoint& checkpoint, const std::string& name);
bool has_entry(const Checkpoint& checkpoint, const std::string& name);

}  // namespace tinydetr
