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

// JSONL records exchanged between commands: generations, references and
// preference judgements.

#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "convqg/errors.hpp"
#include "convqg/metrics.hpp"
#include "json.hpp"

namespace convqg {

// Calls `fn(record, line_number)` for every non-blank line.
inline void for_each_jsonl(const std::string& path,
                           const std::function<void(const nlohmann::json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (is_blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("invalid JSON: ") + e.what(), n);
    }
    if (!j.is_object()) throw FormatError("expected a JSON object", n);
    try {
      fn(j, n);
    } catch (const FormatError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(e.what(), n);
    } catch (const ValueError& e) {
      throw FormatError(e.what(), n);
    }
  }
}

inline std::string required_string(const nlohmann::json& j, const char* key, std::size_t line) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw FormatError(std::string("missing string field '") + key + "'", line);
  }
  return j[key].get<std::string>();
}

struct GeneratedRecord {
  std::string id;
  std::string constraint_type;
  std::string t_prime;
  std::string question;
  double score = 0;
};

inline nlohmann::json to_json(const GeneratedRecord& r) {
  return {{"id", r.id}, {"constraint_type", r.constraint_type}, {"t_prime", r.t_prime},
          {"question", r.question}, {"score", r.score}};
}

inline std::vector<GeneratedRecord> read_generated(const std::string& path) {
  std::vector<GeneratedRecord> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    GeneratedRecord r;
    r.id = required_string(j, "id", line);
    r.question = required_string(j, "question", line);
    r.constraint_type = j.value("constraint_type", "");
    r.t_prime = j.value("t_prime", "");
    r.score = j.value("score", 0.0);
    out.push_back(std::move(r));
  });
  return out;
}

// {"id", "references": [...]} or {"id", "question"}; repeated ids accumulate.
inline std::map<std::string, std::vector<std::string>> read_references(const std::string& path) {
  std::map<std::string, std::vector<std::string>> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    const auto id = required_string(j, "id", line);
    auto& refs = out[id];
    if (j.contains("references")) {
      if (!j["references"].is_array()) throw FormatError("'references' must be an array", line);
      for (const auto& r : j["references"]) refs.push_back(r.get<std::string>());
    } else {
      refs.push_back(required_string(j, "question", line));
    }
    if (refs.empty()) throw FormatError("instance '" + id + "' has no references", line);
  });
  return out;
}

// Candidates in file order; every generated id must have references.
inline metrics::EvalCorpus align_corpus(const std::vector<GeneratedRecord>& generated,
                                        const std::map<std::string, std::vector<std::string>>& refs) {
  metrics::EvalCorpus corpus;
  std::vector<std::string> missing;
  std::set<std::string> seen;
  for (const auto& g : generated) {
    if (!seen.insert(g.id).second) throw ValueError("duplicate generated id '" + g.id + "'");
    auto it = refs.find(g.id);
    if (it == refs.end()) {
      missing.push_back(g.id);
      continue;
    }
    corpus.push_back({g.id, g.question, it->second});
  }
  if (!missing.empty()) {
    std::string msg = "generated ids without references:";
    for (const auto& id : missing) msg += " " + id;
    throw ValueError(msg);
  }
  return corpus;
}

inline nlohmann::json to_json(const metrics::Report& r) {
  return {{"bleu1", r.bleu[0]}, {"bleu2", r.bleu[1]},         {"bleu3", r.bleu[2]},
          {"bleu4", r.bleu[3]}, {"rouge_l", r.rouge_l}, {"meteor_lite", r.meteor_lite},
          {"cider", r.cider}};
}

inline std::vector<metrics::PreferenceRecord> read_preferences(const std::string& path) {
  std::vector<metrics::PreferenceRecord> out;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    metrics::PreferenceRecord r;
    r.question_a = required_string(j, "question_a", line);
    r.question_b = required_string(j, "question_b", line);
    if (is_blank(r.question_a) || is_blank(r.question_b)) throw FormatError("empty question", line);
    r.choice = metrics::parse_choice(required_string(j, "choice", line));
    out.push_back(std::move(r));
  });
  return out;
}

}  // namespace convqg
