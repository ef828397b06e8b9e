// Copyright 2026 The ConVQG Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#pragma once

#include <cctype>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convqg/constraints.hpp"
#include "convqg/errors.hpp"

namespace convqg {

// Lowercase, drop punctuation, split on whitespace. A case-insensitive
// "[mask]" survives as the single token "[MASK]".
inline std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] == '[' && i + kMaskToken.size() <= text.size() &&
        is_mask_token(text.substr(i, kMaskToken.size()))) {
      flush();
      out.emplace_back(kMaskToken);
      i += kMaskToken.size();
      continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
    ++i;
  }
  flush();
  return out;
}

inline std::string normalize_text(std::string_view text) {
  std::string out;
  for (const auto& t : normalize_tokens(text)) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

// Closed word-level vocabulary with fixed special ids.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecials = 5;

  Vocab() : tokens_{"[PAD]", "[BOS]", "[EOS]", "[UNK]", std::string(kMaskToken)} { reindex(); }

  // Sorted so the id assignment does not depend on corpus order.
  static Vocab build(const std::vector<std::string>& sentences) {
    std::set<std::string> words;
    for (const auto& s : sentences) {
      for (auto& t : normalize_tokens(s)) words.insert(std::move(t));
    }
    Vocab v;
    for (const auto& w : words) {
      if (!v.index_.contains(w)) v.tokens_.push_back(w);
    }
    v.reindex();
    return v;
  }

  static Vocab from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kNumSpecials || tokens[kPad] != "[PAD]" || tokens[kBos] != "[BOS]" ||
        tokens[kEos] != "[EOS]" || tokens[kUnk] != "[UNK]" || tokens[kMask] != kMaskToken) {
      throw ValueError("vocabulary does not start with the special tokens");
    }
    Vocab v;
    v.tokens_ = std::move(tokens);
    v.reindex();
    if (v.index_.size() != v.tokens_.size()) throw ValueError("duplicate vocabulary entry");
    return v;
  }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int> encode(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& t : normalize_tokens(text)) ids.push_back(id(t));
    return ids;
  }

  // Stops at [EOS]; skips [PAD] and [BOS].
  std::string decode(const std::vector<int>& ids) const {
    std::string out;
    for (int i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      if (!out.empty()) out += ' ';
      out += token(i);
    }
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace convqg
