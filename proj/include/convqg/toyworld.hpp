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

// Synthetic grid-world scenes standing in for images, a small commonsense
// ontology, the ground-truth question grammar, and JSONL ingestion for the
// four supported dataset record shapes.

#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "convqg/constraints.hpp"
#include "convqg/errors.hpp"
#include "convqg/grad.hpp"

namespace convqg::toyworld {

using nlohmann::json;

inline constexpr std::array<std::string_view, 12> kCategories = {
    "cup", "ball", "book", "chair", "lamp", "knife",
    "bottle", "plant", "clock", "shoe", "bag", "phone"};
inline constexpr std::array<std::string_view, 6> kColors = {
    "red", "blue", "green", "yellow", "white", "black"};
inline constexpr std::array<std::string_view, 3> kSizes = {"small", "medium", "large"};

// one-hot category + color + size, then (row, col)
inline constexpr std::size_t kPatchDim = kCategories.size() + kColors.size() + kSizes.size() + 2;
inline constexpr int kDefaultGridSize = 4;

struct Object {
  std::uint8_t category = 0;
  std::uint8_t color = 0;
  std::uint8_t size = 0;

  std::string referring_expression() const {
    return std::string(kColors[color]) + " " + std::string(kCategories[category]);
  }
  friend bool operator==(const Object&, const Object&) = default;
};

struct Scene {
  int grid_size = kDefaultGridSize;
  std::vector<std::optional<Object>> cells;  // row-major, grid_size^2 entries
  std::string scene_id;

  static Scene empty(int grid_size, std::string id = {}) {
    Scene s;
    s.grid_size = grid_size;
    s.cells.assign(static_cast<std::size_t>(grid_size * grid_size), std::nullopt);
    s.scene_id = std::move(id);
    return s;
  }

  std::size_t object_count() const {
    return static_cast<std::size_t>(
        std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.has_value(); }));
  }

  // Objects in row-major order.
  std::vector<Object> objects() const {
    std::vector<Object> out;
    for (const auto& c : cells) {
      if (c) out.push_back(*c);
    }
    return out;
  }

  friend bool operator==(const Scene&, const Scene&) = default;
};

// Throws ValueError when the scene violates its invariants.
inline void validate(const Scene& s) {
  if (s.grid_size < 1) throw ValueError("scene grid_size must be positive");
  if (s.cells.size() != static_cast<std::size_t>(s.grid_size * s.grid_size)) {
    throw ValueError("scene has " + std::to_string(s.cells.size()) + " cells for grid " +
                     std::to_string(s.grid_size));
  }
  const std::size_t n = s.object_count();
  if (n < 1) throw ValueError("scene '" + s.scene_id + "' has no objects");
  std::vector<std::pair<int, int>> seen;
  for (const auto& c : s.cells) {
    if (!c) continue;
    if (c->category >= kCategories.size() || c->color >= kColors.size() ||
        c->size >= kSizes.size()) {
      throw ValueError("scene '" + s.scene_id + "' has an out-of-range attribute");
    }
    std::pair<int, int> key{c->category, c->color};
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw ValueError("scene '" + s.scene_id + "' repeats the object " +
                       c->referring_expression());
    }
    seen.push_back(key);
  }
}

// Patch features of an ingested record that carries no scene.
struct RawFeatures {
  std::vector<std::vector<float>> rows;
  friend bool operator==(const RawFeatures&, const RawFeatures&) = default;
};

enum class Split { kTrain, kVal, kTest };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val" || s == "valid" || s == "validation") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ValueError("unknown split '" + std::string(s) + "'");
}

struct Example {
  std::string id;
  std::variant<Scene, RawFeatures> visual;
  std::string question;
  std::string answer;
  Constraint constraint;
  Split split = Split::kTrain;

  const Scene* scene() const { return std::get_if<Scene>(&visual); }
  friend bool operator==(const Example&, const Example&) = default;
};

// ---------------------------------------------------------------------------
// Ontology and question grammar
// ---------------------------------------------------------------------------

struct Fact {
  std::string_view category;
  Relation relation;
  std::string_view object;
};

// Three facts per category; every relation appears at least once.
inline constexpr std::array<Fact, 36> kFacts = {{
    {"cup", Relation::kUsedFor, "drinking"},
    {"cup", Relation::kMadeUpOf, "ceramic"},
    {"cup", Relation::kAtLocation, "kitchen"},
    {"ball", Relation::kUsedFor, "playing games"},
    {"ball", Relation::kReceivesAction, "thrown"},
    {"ball", Relation::kHasProperty, "round"},
    {"book", Relation::kUsedFor, "reading"},
    {"book", Relation::kHasA, "pages"},
    {"book", Relation::kCreatedBy, "author"},
    {"chair", Relation::kUsedFor, "sitting"},
    {"chair", Relation::kAtLocation, "living room"},
    {"chair", Relation::kMadeUpOf, "wood"},
    {"lamp", Relation::kUsedFor, "lighting"},
    {"lamp", Relation::kCauses, "brightness"},
    {"lamp", Relation::kHasPrerequisite, "electricity"},
    {"knife", Relation::kUsedFor, "cutting"},
    {"knife", Relation::kCapableOf, "slicing bread"},
    {"knife", Relation::kHasProperty, "sharp"},
    {"bottle", Relation::kUsedFor, "storing liquid"},
    {"bottle", Relation::kReceivesAction, "opened"},
    {"bottle", Relation::kIsA, "container"},
    {"plant", Relation::kDesires, "sunlight"},
    {"plant", Relation::kNotDesires, "darkness"},
    {"plant", Relation::kIsA, "living thing"},
    {"clock", Relation::kUsedFor, "telling time"},
    {"clock", Relation::kHasA, "hands"},
    {"clock", Relation::kDefinedAs, "time keeper"},
    {"shoe", Relation::kUsedFor, "walking"},
    {"shoe", Relation::kHasSubEvent, "tying laces"},
    {"shoe", Relation::kAtLocation, "closet"},
    {"bag", Relation::kCapableOf, "holding things"},
    {"bag", Relation::kUsedFor, "carrying"},
    {"bag", Relation::kMadeUpOf, "leather"},
    {"phone", Relation::kCapableOf, "making calls"},
    {"phone", Relation::kHasPrerequisite, "battery"},
    {"phone", Relation::kIsA, "device"},
}};

// Wh-question frame for a relation; `{}` is replaced by a noun phrase.
inline std::string_view question_frame(Relation r) {
  switch (r) {
    case Relation::kUsedFor: return "what is the {} used for";
    case Relation::kReceivesAction: return "what can happen to the {}";
    case Relation::kHasA: return "what does the {} have";
    case Relation::kCauses: return "what does the {} cause";
    case Relation::kHasProperty: return "what property does the {} have";
    case Relation::kCreatedBy: return "who is the {} created by";
    case Relation::kDefinedAs: return "what is the {} defined as";
    case Relation::kAtLocation: return "where is the {} usually located";
    case Relation::kHasSubEvent: return "what is part of using the {}";
    case Relation::kMadeUpOf: return "what is the {} made of";
    case Relation::kHasPrerequisite: return "what does the {} need first";
    case Relation::kDesires: return "what does the {} desire";
    case Relation::kNotDesires: return "what does the {} not desire";
    case Relation::kIsA: return "what kind of thing is the {}";
    case Relation::kCapableOf: return "what is the {} capable of";
  }
  return "what is the {}";
}

inline std::string fill_frame(Relation r, std::string_view noun_phrase) {
  std::string frame(question_frame(r));
  const auto pos = frame.find("{}");
  return frame.replace(pos, 2, noun_phrase);
}

// Ground-truth question for a fact about a concrete scene object.
inline std::string ground_truth_question(const Object& obj, Relation r) {
  return fill_frame(r, obj.referring_expression());
}

inline int category_index(std::string_view name) {
  for (std::size_t i = 0; i < kCategories.size(); ++i)
    if (kCategories[i] == name) return static_cast<int>(i);
  return -1;
}

inline int color_index(std::string_view name) {
  for (std::size_t i = 0; i < kColors.size(); ++i)
    if (kColors[i] == name) return static_cast<int>(i);
  return -1;
}

inline int size_index(std::string_view name) {
  for (std::size_t i = 0; i < kSizes.size(); ++i)
    if (kSizes[i] == name) return static_cast<int>(i);
  return -1;
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

struct WorldOptions {
  int grid_size = kDefaultGridSize;
  int min_objects = 2;
  int max_objects = 5;
  int examples_per_scene = 1;
};

// Deterministic corpus of n_scenes scenes over the first `ontology_size`
// categories. Scenes hold distinct categories, so the triplet subject always
// identifies one object and only the image tells its color.
inline std::vector<Example> generate_world(std::uint64_t seed, int n_scenes, int ontology_size,
                                           const WorldOptions& opt = {}) {
  if (n_scenes < 1) throw ValueError("generate_world: n_scenes must be >= 1");
  if (ontology_size < 1 || ontology_size > static_cast<int>(kCategories.size())) {
    throw ValueError("generate_world: ontology_size must be in [1, " +
                     std::to_string(kCategories.size()) + "]");
  }
  const int cells = opt.grid_size * opt.grid_size;
  if (opt.min_objects < 1 || opt.max_objects < opt.min_objects || opt.max_objects > cells) {
    throw ValueError("generate_world: invalid object count range");
  }
  if (ontology_size < opt.max_objects) {
    throw ValueError("generate_world: ontology of " + std::to_string(ontology_size) +
                     " categories cannot fill scenes with " + std::to_string(opt.max_objects) +
                     " distinct objects");
  }
  if (opt.examples_per_scene < 1 || opt.examples_per_scene > opt.min_objects) {
    throw ValueError("generate_world: examples_per_scene must be in [1, min_objects]");
  }

  std::mt19937_64 rng(seed);
  auto uniform = [&rng](int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };

  const int n_train = n_scenes * 8 / 10;
  const int n_val = n_scenes / 10;

  std::vector<Example> out;
  for (int s = 0; s < n_scenes; ++s) {
    char sid[32];
    std::snprintf(sid, sizeof(sid), "scene%05d", s);
    Scene scene = Scene::empty(opt.grid_size, sid);

    const int n_obj = uniform(opt.min_objects, opt.max_objects);
    std::vector<int> cats(static_cast<std::size_t>(ontology_size));
    for (int i = 0; i < ontology_size; ++i) cats[i] = i;
    std::vector<int> cell_ids(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i) cell_ids[i] = i;
    // partial Fisher-Yates for both draws
    for (int i = 0; i < n_obj; ++i) {
      std::swap(cats[i], cats[uniform(i, ontology_size - 1)]);
      std::swap(cell_ids[i], cell_ids[uniform(i, cells - 1)]);
    }
    std::vector<int> placed;
    for (int i = 0; i < n_obj; ++i) {
      Object o;
      o.category = static_cast<std::uint8_t>(cats[i]);
      o.color = static_cast<std::uint8_t>(uniform(0, static_cast<int>(kColors.size()) - 1));
      o.size = static_cast<std::uint8_t>(uniform(0, static_cast<int>(kSizes.size()) - 1));
      scene.cells[cell_ids[i]] = o;
      placed.push_back(cell_ids[i]);
    }
    std::sort(placed.begin(), placed.end());

    const Split split = s < n_train ? Split::kTrain : (s < n_train + n_val ? Split::kVal : Split::kTest);

    // distinct target objects per scene
    std::vector<int> targets = placed;
    for (int k = 0; k < opt.examples_per_scene; ++k) {
      std::swap(targets[k], targets[uniform(k, static_cast<int>(targets.size()) - 1)]);
    }
    for (int k = 0; k < opt.examples_per_scene; ++k) {
      const Object& obj = *scene.cells[targets[k]];
      std::vector<const Fact*> facts;
      for (const auto& f : kFacts) {
        if (f.category == kCategories[obj.category]) facts.push_back(&f);
      }
      const Fact& fact = *facts[uniform(0, static_cast<int>(facts.size()) - 1)];

      Example ex;
      ex.id = std::string(sid) + "_q" + std::to_string(k);
      ex.visual = scene;
      ex.answer = std::string(fact.object);
      ex.constraint = Constraint::triplet(
          {std::string(fact.category), fact.relation, std::string(fact.object), MaskedSlot::kObject});
      ex.question = ground_truth_question(obj, fact.relation);
      ex.split = split;
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patch features
// ---------------------------------------------------------------------------

template <std::floating_point T>
grad::Tensor<T> scene_to_patches(const Scene& scene) {
  const int g = scene.grid_size;
  if (g < 1 || scene.cells.size() != static_cast<std::size_t>(g * g)) {
    throw ValueError("scene_to_patches: malformed scene");
  }
  const std::size_t n = scene.cells.size();
  grad::Tensor<T> out({n, kPatchDim});
  const T denom = g > 1 ? T(g - 1) : T(1);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<int>(i) / g;
    const auto col = static_cast<int>(i) % g;
    if (const auto& obj = scene.cells[i]) {
      out.at(i, obj->category) = T(1);
      out.at(i, kCategories.size() + obj->color) = T(1);
      out.at(i, kCategories.size() + kColors.size() + obj->size) = T(1);
    }
    out.at(i, kPatchDim - 2) = T(row) / denom;
    out.at(i, kPatchDim - 1) = T(col) / denom;
  }
  return out;
}

template <std::floating_point T>
grad::Tensor<T> patches_of(const Example& ex) {
  if (const Scene* s = ex.scene()) return scene_to_patches<T>(*s);
  const auto& rows = std::get<RawFeatures>(ex.visual).rows;
  if (rows.empty() || rows[0].empty()) throw ValueError("example '" + ex.id + "' has empty features");
  grad::Tensor<T> out({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      throw DimensionError("example '" + ex.id + "' has ragged feature rows");
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) out.at(i, j) = T(rows[i][j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json scene_to_json(const Scene& s) {
  json objs = json::array();
  for (std::size_t i = 0; i < s.cells.size(); ++i) {
    if (!s.cells[i]) continue;
    const Object& o = *s.cells[i];
    objs.push_back({{"row", static_cast<int>(i) / s.grid_size},
                    {"col", static_cast<int>(i) % s.grid_size},
                    {"category", kCategories[o.category]},
                    {"color", kColors[o.color]},
                    {"size", kSizes[o.size]}});
  }
  return {{"scene_id", s.scene_id}, {"grid_size", s.grid_size}, {"objects", objs}};
}

inline Scene scene_from_json(const json& j) {
  Scene s = Scene::empty(j.value("grid_size", kDefaultGridSize), j.value("scene_id", ""));
  for (const auto& o : j.at("objects")) {
    const int r = o.at("row").get<int>(), c = o.at("col").get<int>();
    if (r < 0 || c < 0 || r >= s.grid_size || c >= s.grid_size) {
      throw ValueError("object position out of grid");
    }
    const int cat = category_index(o.at("category").get<std::string>());
    const int col = color_index(o.at("color").get<std::string>());
    const int sz = size_index(o.value("size", std::string(kSizes[0])));
    if (cat < 0 || col < 0 || sz < 0) throw ValueError("unknown object attribute");
    auto& cell = s.cells[static_cast<std::size_t>(r * s.grid_size + c)];
    if (cell) throw ValueError("two objects in one cell");
    cell = Object{static_cast<std::uint8_t>(cat), static_cast<std::uint8_t>(col),
                  static_cast<std::uint8_t>(sz)};
  }
  validate(s);
  return s;
}

inline json constraint_to_json(const Constraint& c) {
  json j = {{"type", constraint_kind_name(c.kind)}};
  if (c.kind == ConstraintKind::kTriplet) {
    const auto& t = c.as_triplet();
    j["subject"] = t.subject;
    j["relation"] = relation_name(t.relation);
    j["object"] = t.object;
    j["masked"] = masked_slot_name(t.masked);
  } else if (c.kind == ConstraintKind::kAnswer) {
    j["answer"] = c.text();
  } else {
    j["text"] = c.text();
  }
  return j;
}

// Triplet from raw entities: a literal mask token (any case) or the answer
// string picks the masked slot.
inline KnowledgeTriplet triplet_from_entities(std::string subject, std::string_view relation,
                                              std::string object, const std::string& answer) {
  KnowledgeTriplet t{std::move(subject), parse_relation(relation), std::move(object),
                     MaskedSlot::kNone};
  auto fill = [&](std::string& slot, MaskedSlot which) {
    t.masked = which;
    if (is_mask_token(slot) && !answer.empty()) slot = answer;
  };
  if (is_mask_token(t.object)) {
    fill(t.object, MaskedSlot::kObject);
  } else if (is_mask_token(t.subject)) {
    fill(t.subject, MaskedSlot::kSubject);
  } else if (!answer.empty() && to_lower(t.object) == to_lower(answer)) {
    t.masked = MaskedSlot::kObject;
  } else if (!answer.empty() && to_lower(t.subject) == to_lower(answer)) {
    t.masked = MaskedSlot::kSubject;
  }
  return t;
}

inline Constraint constraint_from_json(const json& j, const std::string& answer) {
  const ConstraintKind kind = parse_constraint_kind(j.at("type").get<std::string>());
  switch (kind) {
    case ConstraintKind::kTriplet: {
      KnowledgeTriplet t = triplet_from_entities(j.at("subject").get<std::string>(),
                                                 j.at("relation").get<std::string>(),
                                                 j.at("object").get<std::string>(), answer);
      if (j.contains("masked")) t.masked = parse_masked_slot(j.at("masked").get<std::string>());
      return Constraint::triplet(std::move(t));
    }
    case ConstraintKind::kAnswer:
      return Constraint::answer(j.contains("answer") ? j.at("answer").get<std::string>() : answer);
    case ConstraintKind::kCaption:
      return Constraint::caption(j.at("text").get<std::string>());
    case ConstraintKind::kFact:
      return Constraint::fact(j.at("text").get<std::string>());
  }
  throw ValueError("invalid constraint");
}

inline json example_to_json(const Example& ex) {
  json j = {{"id", ex.id}, {"question", ex.question}};
  if (const Scene* s = ex.scene()) {
    j["scene"] = scene_to_json(*s);
  } else {
    j["features"] = std::get<RawFeatures>(ex.visual).rows;
  }
  j["answer"] = ex.answer;
  j["constraint"] = constraint_to_json(ex.constraint);
  j["split"] = split_name(ex.split);
  return j;
}

inline void write_jsonl(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& ex : examples) out << example_to_json(ex).dump() << '\n';
  if (!out) throw IoError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

enum class RecordFormat { kKvqg, kVqa, kVqgCoco, kFvqa };

inline RecordFormat parse_format(std::string_view s) {
  if (s == "kvqg") return RecordFormat::kKvqg;
  if (s == "vqa") return RecordFormat::kVqa;
  if (s == "vqgcoco") return RecordFormat::kVqgCoco;
  if (s == "fvqa") return RecordFormat::kFvqa;
  throw ValueError("unknown record format '" + std::string(s) + "'");
}

namespace detail {

inline bool kind_allowed(RecordFormat f, ConstraintKind k) {
  switch (f) {
    case RecordFormat::kKvqg: return k == ConstraintKind::kTriplet || k == ConstraintKind::kAnswer;
    case RecordFormat::kVqa: return k == ConstraintKind::kAnswer;
    case RecordFormat::kVqgCoco: return k == ConstraintKind::kCaption;
    case RecordFormat::kFvqa: return k == ConstraintKind::kFact;
  }
  return false;
}

inline std::variant<Scene, RawFeatures> visual_from_json(const json& j) {
  if (j.contains("scene")) return scene_from_json(j.at("scene"));
  if (j.contains("features")) {
    RawFeatures f{j.at("features").get<std::vector<std::vector<float>>>()};
    if (f.rows.empty() || f.rows[0].empty()) throw ValueError("empty features");
    for (const auto& r : f.rows) {
      if (r.size() != f.rows[0].size()) throw ValueError("ragged features");
    }
    return f;
  }
  throw ValueError("record has neither 'scene' nor 'features'");
}

inline std::vector<Example> examples_from_record(const json& j, RecordFormat fmt) {
  if (!j.is_object()) throw ValueError("record is not a JSON object");
  const std::string id = j.at("id").get<std::string>();
  const auto visual = visual_from_json(j);
  const std::string answer = j.value("answer", std::string());
  Split split = Split::kTest;
  if (j.contains("split")) {
    split = parse_split(j.at("split").get<std::string>());
  } else if (fmt != RecordFormat::kFvqa) {
    throw ValueError("record has no 'split'");
  }

  auto make = [&](std::string ex_id, std::string question, Constraint c) {
    if (is_blank(question)) throw ValueError("empty question");
    if (!kind_allowed(fmt, c.kind)) {
      throw ValueError("constraint type '" + std::string(constraint_kind_name(c.kind)) +
                       "' not valid for this format");
    }
    render(c);  // rejects empty constraints
    return Example{std::move(ex_id), visual, std::move(question), answer, std::move(c), split};
  };

  if (j.contains("constraint")) {
    return {make(id, j.at("question").get<std::string>(), constraint_from_json(j.at("constraint"), answer))};
  }
  switch (fmt) {
    case RecordFormat::kKvqg: {
      if (j.contains("triplet")) {
        const auto& t = j.at("triplet");
        if (!t.is_array() || t.size() != 3) throw ValueError("'triplet' must have 3 entries");
        auto trip = triplet_from_entities(t[0].get<std::string>(), t[1].get<std::string>(),
                                          t[2].get<std::string>(), answer);
        if (trip.masked == MaskedSlot::kNone) {
          throw ValueError("triplet has no slot matching the answer or [MASK]");
        }
        return {make(id, j.at("question").get<std::string>(), Constraint::triplet(std::move(trip)))};
      }
      return {make(id, j.at("question").get<std::string>(), Constraint::answer(answer))};
    }
    case RecordFormat::kVqa:
      return {make(id, j.at("question").get<std::string>(), Constraint::answer(answer))};
    case RecordFormat::kFvqa:
      return {make(id, j.at("question").get<std::string>(), Constraint::fact(j.at("fact").get<std::string>()))};
    case RecordFormat::kVqgCoco: {
      std::vector<std::string> questions;
      if (j.contains("questions")) {
        questions = j.at("questions").get<std::vector<std::string>>();
      } else {
        questions.push_back(j.at("question").get<std::string>());
      }
      const auto captions = j.at("captions").get<std::vector<std::string>>();
      if (questions.empty() || captions.empty()) throw ValueError("need questions and captions");
      std::vector<Example> out;
      for (std::size_t k = 0; k < captions.size(); ++k) {
        out.push_back(make(id + "#c" + std::to_string(k), questions[k % questions.size()],
                           Constraint::caption(captions[k])));
      }
      return out;
    }
  }
  return {};
}

}  // namespace detail

inline std::vector<Example> ingest_jsonl_stream(std::istream& in, RecordFormat fmt) {
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (is_blank(line)) continue;
    try {
      auto recs = detail::examples_from_record(json::parse(line), fmt);
      for (auto& r : recs) out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw FormatError(e.what(), lineno);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), lineno);
    }
  }
  return out;
}

inline std::vector<Example> ingest_jsonl(const std::string& path, std::string_view format) {
  const RecordFormat fmt = parse_format(format);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return ingest_jsonl_stream(in, fmt);
}

inline std::vector<Example> filter_split(const std::vector<Example>& all, Split split) {
  std::vector<Example> out;
  std::copy_if(all.begin(), all.end(), std::back_inserter(out),
               [split](const Example& e) { return e.split == split; });
  return out;
}

}  // namespace convqg::toyworld
