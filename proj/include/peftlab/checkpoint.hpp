#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "peftlab/encoder.hpp"

namespace peftlab {

// Binary snapshot layout (all integers little-endian):
//   bytes 0..7   magic "PEFTLAB1"
//   u64          header length in bytes
//   header       canonical JSON: {"config":{...},"format":"peftlab-v1","method":...,"seed":...}
//   records      sorted by name, each
//                [u64 name_len][name][u64 rank][u64 dim...][f64 value...]
inline constexpr char kCheckpointMagic[8] = {'P', 'E', 'F', 'T', 'L', 'A', 'B', '1'};
inline constexpr const char* kCheckpointFormat = "peftlab-v1";

struct CheckpointMeta {
  EncoderConfig config;
  std::string method;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;  // sorted by name

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);
Checkpoint load_checkpoint(const std::string& path);

void save_encoder_checkpoint(const std::string& path, const EncoderParams& enc,
                             const std::string& method, std::uint64_t seed);
std::pair<EncoderParams, CheckpointMeta> load_encoder_checkpoint(const std::string& path);

}  // namespace peftlab
