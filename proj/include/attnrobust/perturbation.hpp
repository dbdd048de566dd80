// SPDX-License-Identifier: Apache-2.0
/**
 * @file   perturbation.hpp
 * @brief  Direction-plus-magnitude perturbation attached to one example.
 */
#pragma once

#include <optional>
#include <string_view>
#include <vector>

namespace attnrobust {

enum class Attachment { word_embedding, attention_scores };

std::string_view to_string(Attachment a);

/**
 * Per-example perturbation. `direction` and `realized` use the padded layout
 * of the attachment tensor: max_len entries for attention scores, or
 * max_len * embed_dim entries for word embeddings. Entries at masked-out
 * positions are exactly zero.
 */
struct Perturbation {
  Attachment attachment = Attachment::attention_scores;
  std::vector<double> direction;
  double epsilon = 0.0;
  std::vector<double> realized;
};

} // namespace attnrobust
