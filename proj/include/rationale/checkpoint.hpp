#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rationale/model.hpp"

namespace rationale {

struct Checkpoint {
  model::Model model;
  double valid_loss = 0.0;
  int epoch = 0;
  int stage = 1;
  std::string stage_tag;    // e.g. "vanilla", "3stage/stage3"
  std::string method;       // vanilla | contra | 3stage
  std::string config_hash;
  bool label_trained = true;  // false for label-free (contrastive-only) training
  std::vector<std::string> vocabulary;
};

// Binary layout: the 8-byte magic "RATCKPT1", a little-endian u64 header
// size, a JSON header (metadata plus a tensor table of name/rows/cols), then
// every tensor's doubles in column-major order, in header order.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rationale
