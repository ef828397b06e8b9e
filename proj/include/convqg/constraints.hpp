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

// Textual constraints and their sentence form.
//
// A constraint is one of: a knowledge triplet with an optional masked slot,
// an expected answer, a caption, or a free-form fact sentence. render() turns
// any of them into the single sentence the text encoder consumes.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <variant>

#include "convqg/errors.hpp"

namespace convqg {

inline constexpr std::string_view kMaskToken = "[MASK]";

enum class Relation {
  kUsedFor,
  kReceivesAction,
  kHasA,
  kCauses,
  kHasProperty,
  kCreatedBy,
  kDefinedAs,
  kAtLocation,
  kHasSubEvent,
  kMadeUpOf,
  kHasPrerequisite,
  kDesires,
  kNotDesires,
  kIsA,
  kCapableOf,
};

inline constexpr std::size_t kNumRelations = 15;

struct RelationInfo {
  Relation relation;
  std::string_view name;
  std::string_view phrase;
};

inline constexpr std::array<RelationInfo, kNumRelations> kRelations = {{
    {Relation::kUsedFor, "UsedFor", "is used for"},
    {Relation::kReceivesAction, "ReceivesAction", "receives action"},
    {Relation::kHasA, "HasA", "has a"},
    {Relation::kCauses, "Causes", "causes"},
    {Relation::kHasProperty, "HasProperty", "has a property"},
    {Relation::kCreatedBy, "CreatedBy", "is created by"},
    {Relation::kDefinedAs, "DefinedAs", "is defined as"},
    {Relation::kAtLocation, "AtLocation", "is at location of"},
    {Relation::kHasSubEvent, "HasSubEvent", "has"},
    {Relation::kMadeUpOf, "MadeUpOf", "is made of"},
    {Relation::kHasPrerequisite, "HasPrerequisite", "has prerequisite to"},
    {Relation::kDesires, "Desires", "desires"},
    {Relation::kNotDesires, "NotDesires", "not desires"},
    {Relation::kIsA, "IsA", "is a"},
    {Relation::kCapableOf, "CapableOf", "is capable of"},
}};

inline std::string_view relation_name(Relation r) {
  return kRelations[static_cast<std::size_t>(r)].name;
}

inline Relation parse_relation(std::string_view name) {
  for (const auto& info : kRelations) {
    if (info.name == name) return info.relation;
  }
  throw ValueError("unknown relation '" + std::string(name) + "'");
}

// Sentence connective for a relation.
inline std::string_view relation_template(Relation r) {
  return kRelations[static_cast<std::size_t>(r)].phrase;
}

inline std::string_view relation_template(std::string_view name) {
  return relation_template(parse_relation(name));
}

enum class MaskedSlot { kNone, kSubject, kObject };

inline std::string_view masked_slot_name(MaskedSlot s) {
  switch (s) {
    case MaskedSlot::kSubject: return "subject";
    case MaskedSlot::kObject: return "object";
    case MaskedSlot::kNone: break;
  }
  return "none";
}

inline MaskedSlot parse_masked_slot(std::string_view s) {
  if (s == "subject") return MaskedSlot::kSubject;
  if (s == "object") return MaskedSlot::kObject;
  if (s == "none") return MaskedSlot::kNone;
  throw ValueError("unknown masked slot '" + std::string(s) + "'");
}

// Entities are stored unmasked; the masked slot is substituted at render time.
struct KnowledgeTriplet {
  std::string subject;
  Relation relation = Relation::kUsedFor;
  std::string object;
  MaskedSlot masked = MaskedSlot::kNone;

  friend bool operator==(const KnowledgeTriplet&, const KnowledgeTriplet&) = default;
};

enum class ConstraintKind { kTriplet, kAnswer, kCaption, kFact };

inline std::string_view constraint_kind_name(ConstraintKind k) {
  switch (k) {
    case ConstraintKind::kTriplet: return "triplet";
    case ConstraintKind::kAnswer: return "answer";
    case ConstraintKind::kCaption: return "caption";
    case ConstraintKind::kFact: return "fact";
  }
  return "?";
}

inline ConstraintKind parse_constraint_kind(std::string_view s) {
  if (s == "triplet") return ConstraintKind::kTriplet;
  if (s == "answer") return ConstraintKind::kAnswer;
  if (s == "caption") return ConstraintKind::kCaption;
  if (s == "fact") return ConstraintKind::kFact;
  throw ValueError("unknown constraint type '" + std::string(s) + "'");
}

struct Constraint {
  ConstraintKind kind = ConstraintKind::kAnswer;
  std::variant<KnowledgeTriplet, std::string> payload;

  static Constraint triplet(KnowledgeTriplet t) { return {ConstraintKind::kTriplet, std::move(t)}; }
  static Constraint answer(std::string a) { return {ConstraintKind::kAnswer, std::move(a)}; }
  static Constraint caption(std::string c) { return {ConstraintKind::kCaption, std::move(c)}; }
  static Constraint fact(std::string f) { return {ConstraintKind::kFact, std::move(f)}; }

  const KnowledgeTriplet& as_triplet() const { return std::get<KnowledgeTriplet>(payload); }
  const std::string& text() const { return std::get<std::string>(payload); }

  friend bool operator==(const Constraint&, const Constraint&) = default;
};

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

inline bool is_mask_token(std::string_view s) { return to_lower(s) == "[mask]"; }

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

// "{subject} {template} {object}", masked slot replaced by [MASK], entities
// lowercased.
inline std::string render_triplet(const KnowledgeTriplet& t) {
  auto entity = [](const std::string& e, bool masked) {
    if (masked || is_mask_token(e)) return std::string(kMaskToken);
    if (is_blank(e)) throw ValueError("triplet entity is empty");
    return to_lower(e);
  };
  return entity(t.subject, t.masked == MaskedSlot::kSubject) + " " +
         std::string(relation_template(t.relation)) + " " +
         entity(t.object, t.masked == MaskedSlot::kObject);
}

inline constexpr std::string_view kAnswerPrefix = "The answer to the question is ";

inline std::string render(const Constraint& c) {
  switch (c.kind) {
    case ConstraintKind::kTriplet:
      return render_triplet(c.as_triplet());
    case ConstraintKind::kAnswer:
      if (is_blank(c.text())) throw ValueError("answer constraint is empty");
      return std::string(kAnswerPrefix) + c.text();
    case ConstraintKind::kCaption:
    case ConstraintKind::kFact:
      if (is_blank(c.text())) {
        throw ValueError(std::string(constraint_kind_name(c.kind)) + " constraint is empty");
      }
      return c.text();
  }
  throw ValueError("invalid constraint kind");
}

}  // namespace convqg
