#pragma once

#include <string>

#include "peftlab/checkpoint.hpp"
#include "peftlab/tasks.hpp"

namespace peftlab {

// Datasets reuse the tensor-container format so generated corpora can be
// stored next to model snapshots. Labels are stored as tensors: class ids
// and label sequences as rank-1 records, activity matrices as-is.
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace peftlab
