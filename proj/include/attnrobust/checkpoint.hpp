// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Single-file parameter checkpoints.
 *
 * Layout: the line "ATTNROBUST-CKPT 1", one line of JSON header (dims,
 * score_kind, config_hash, tensor names and shapes in declared order, value
 * count), then the flat parameter vector as little-endian IEEE-754 doubles.
 */
#pragma once

#include <attnrobust/model.hpp>

#include <filesystem>
#include <string>

namespace attnrobust {

struct Checkpoint {
  ModelParams params;
  std::string config_hash;
};

void save_checkpoint(const std::filesystem::path &path, const ModelParams &params,
                     const std::string &config_hash);

Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace attnrobust
