#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "convqa/corpus.hpp"
#include "convqa/model.hpp"

namespace convqa {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  AdamState optimizer;
  Vocab vocab;
  std::uint64_t init_seed = 0;
  int epoch = 0;
  std::string regime;
};

// JSON container; doubles are written in shortest round-trip form so a
// save/load cycle reproduces every bit.
std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace convqa
