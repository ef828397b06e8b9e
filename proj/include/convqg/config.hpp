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

// Run configuration: one flat JSON object, every key optional.

#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>

#include "convqg/errors.hpp"
#include "convqg/model.hpp"
#include "convqg/objective.hpp"
#include "json.hpp"

namespace convqg {

struct RunConfig {
  std::uint64_t seed = 7;
  int epochs = 5;
  int batch_size = 16;
  double lr = 2e-5;
  double weight_decay = 0.05;
  LossConfig loss;
  ModelConfig model;
  int beams = 3;
  std::string select_by = "val_cel";  // or "val_bleu4"
  std::string format = "kvqg";
  std::string train_path;
  std::string val_path;
  std::string test_path;
  std::string out_dir;

  void validate() const {
    if (epochs < 1) throw ValueError("epochs must be >= 1");
    if (batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (!(lr > 0.0)) throw ValueError("lr must be > 0");
    if (!(weight_decay >= 0.0)) throw ValueError("weight_decay must be >= 0");
    if (beams < 1) throw ValueError("beams must be >= 1");
    if (select_by != "val_cel" && select_by != "val_bleu4") {
      throw ValueError("select_by must be val_cel or val_bleu4");
    }
    loss.validate();
    model.validate();
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
          {"d_ff", c.d_ff},       {"max_len", c.max_len},   {"d_sent", c.d_sent},
          {"dropout", c.dropout}, {"n_patches", c.n_patches}, {"d_in", c.d_in}};
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {{"seed", c.seed},
                      {"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"lr", c.lr},
                      {"weight_decay", c.weight_decay},
                      {"alpha", c.loss.alpha},
                      {"margin", c.loss.margin},
                      {"beta", c.loss.beta.to_string()},
                      {"variant", std::string(variant_name(c.loss.variant))},
                      {"beams", c.beams},
                      {"select_by", c.select_by},
                      {"format", c.format},
                      {"train", c.train_path},
                      {"val", c.val_path},
                      {"test", c.test_path},
                      {"out_dir", c.out_dir}};
  j.update(to_json(c.model));
  return j;
}

namespace detail {

template <class V>
void take(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ValueError(std::string("config key '") + key + "' has the wrong type");
  }
}

}  // namespace detail

// Keys missing from `j` keep their value in `base`; unknown keys are errors.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c = {}) {
  detail::take(j, "d_model", c.d_model);
  detail::take(j, "n_layers", c.n_layers);
  detail::take(j, "n_heads", c.n_heads);
  detail::take(j, "d_ff", c.d_ff);
  detail::take(j, "max_len", c.max_len);
  detail::take(j, "d_sent", c.d_sent);
  detail::take(j, "dropout", c.dropout);
  detail::take(j, "n_patches", c.n_patches);
  detail::take(j, "d_in", c.d_in);
  return c;
}

inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  if (!j.is_object()) throw ValueError("config must be a JSON object");
  static const std::set<std::string> known = {
      "seed", "epochs", "batch_size", "lr", "weight_decay", "alpha", "margin", "beta", "variant",
      "beams", "select_by", "format", "train", "val", "test", "out_dir", "d_model", "n_layers",
      "n_heads", "d_ff", "max_len", "d_sent", "dropout", "n_patches", "d_in"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ValueError("unknown config key '" + key + "'");
  }
  detail::take(j, "seed", c.seed);
  detail::take(j, "epochs", c.epochs);
  detail::take(j, "batch_size", c.batch_size);
  detail::take(j, "lr", c.lr);
  detail::take(j, "weight_decay", c.weight_decay);
  detail::take(j, "alpha", c.loss.alpha);
  detail::take(j, "margin", c.loss.margin);
  if (j.contains("beta")) {
    const auto& b = j.at("beta");
    c.loss.beta = b.is_number() ? BetaSchedule::fixed(b.get<double>())
                                : BetaSchedule::parse(b.get<std::string>());
  }
  if (j.contains("variant")) c.loss.variant = parse_variant(j.at("variant").get<std::string>());
  detail::take(j, "beams", c.beams);
  detail::take(j, "select_by", c.select_by);
  detail::take(j, "format", c.format);
  detail::take(j, "train", c.train_path);
  detail::take(j, "val", c.val_path);
  detail::take(j, "test", c.test_path);
  detail::take(j, "out_dir", c.out_dir);
  c.model = model_config_from_json(j, c.model);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace convqg
