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

#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <sstream>

#include "convqg/toyworld.hpp"

namespace convqg::toyworld {
namespace {

constexpr const char* kSceneJson =
    R"({"scene_id":"s","grid_size":4,"objects":[{"row":0,"col":1,"category":"bag","color":"red","size":"small"}]})";

TEST(GenerateWorldTest, DeterministicForFixedSeed) {
  EXPECT_EQ(generate_world(7, 10, 12), generate_world(7, 10, 12));
  EXPECT_NE(generate_world(7, 10, 12), generate_world(8, 10, 12));
}

TEST(GenerateWorldTest, RelationsComeFromTheTemplateTable) {
  for (const auto& ex : generate_world(3, 300, 12)) {
    ASSERT_EQ(ex.constraint.kind, ConstraintKind::kTriplet);
    EXPECT_NO_THROW(relation_template(relation_name(ex.constraint.as_triplet().relation)));
  }
}

TEST(GenerateWorldTest, SplitsByScene) {
  const auto world = generate_world(1, 2000, 12);
  std::map<Split, std::set<std::string>> scenes;
  for (const auto& ex : world) scenes[ex.split].insert(ex.scene()->scene_id);
  EXPECT_EQ(scenes[Split::kTrain].size(), 1600u);
  EXPECT_EQ(scenes[Split::kVal].size(), 200u);
  EXPECT_EQ(scenes[Split::kTest].size(), 200u);
  for (const auto& id : scenes[Split::kTest]) {
    EXPECT_FALSE(scenes[Split::kTrain].contains(id));
    EXPECT_FALSE(scenes[Split::kVal].contains(id));
  }
}

TEST(GenerateWorldTest, QuestionsAreAnswerableAndGrounded) {
  WorldOptions opt;
  opt.examples_per_scene = 2;
  for (const auto& ex : generate_world(11, 200, 12, opt)) {
    const auto& t = ex.constraint.as_triplet();
    EXPECT_EQ(t.masked, MaskedSlot::kObject);
    EXPECT_EQ(t.object, ex.answer);
    const bool in_ontology = std::any_of(kFacts.begin(), kFacts.end(), [&](const Fact& f) {
      return f.category == t.subject && f.relation == t.relation && f.object == ex.answer;
    });
    EXPECT_TRUE(in_ontology) << ex.id;
    // referring expression of an object actually in the scene
    const auto objs = ex.scene()->objects();
    const bool grounded = std::any_of(objs.begin(), objs.end(), [&](const Object& o) {
      return kCategories[o.category] == t.subject &&
             ex.question.find(o.referring_expression()) != std::string::npos;
    });
    EXPECT_TRUE(grounded) << ex.question;
    EXPECT_NO_THROW(validate(*ex.scene()));
  }
}

TEST(GenerateWorldTest, TooSmallOntologyThrows) {
  EXPECT_THROW(generate_world(1, 10, 3), ValueError);
  EXPECT_THROW(generate_world(1, 0, 12), ValueError);
  EXPECT_THROW(generate_world(1, 10, 13), ValueError);
}

TEST(ScenePatchesTest, EmptySceneKeepsCoordinates) {
  const auto p = scene_to_patches<double>(Scene::empty(4));
  ASSERT_EQ(p.shape(), (grad::Shape{16, kPatchDim}));
  EXPECT_EQ(kPatchDim, 23u);
  for (std::size_t i = 0; i < 16; ++i) {
    for (std::size_t j = 0; j < kPatchDim - 2; ++j) EXPECT_EQ(p.at(i, j), 0.0);
    EXPECT_DOUBLE_EQ(p.at(i, 21), static_cast<double>(i / 4) / 3.0);
    EXPECT_DOUBLE_EQ(p.at(i, 22), static_cast<double>(i % 4) / 3.0);
  }
}

TEST(ScenePatchesTest, SingleObjectOneHotRow) {
  Scene s = Scene::empty(4);
  s.cells[0] = Object{2, 3, 1};
  const auto p = scene_to_patches<double>(s);
  int nonzero_rows = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    double block = 0;
    for (std::size_t j = 0; j < kPatchDim - 2; ++j) block += p.at(i, j);
    if (block != 0) ++nonzero_rows;
  }
  EXPECT_EQ(nonzero_rows, 1);
  EXPECT_EQ(p.at(0, 2), 1.0);
  EXPECT_EQ(p.at(0, 12 + 3), 1.0);
  EXPECT_EQ(p.at(0, 18 + 1), 1.0);
}

TEST(ScenePatchesTest, SwappingObjectsSwapsCategoricalBlocks) {
  Scene a = Scene::empty(4);
  a.cells[1] = Object{0, 0, 0};
  a.cells[9] = Object{5, 2, 2};
  Scene b = a;
  std::swap(b.cells[1], b.cells[9]);
  const auto pa = scene_to_patches<double>(a), pb = scene_to_patches<double>(b);
  for (std::size_t i = 0; i < 16; ++i) {
    const std::size_t src = i == 1 ? 9 : (i == 9 ? 1 : i);
    for (std::size_t j = 0; j < kPatchDim - 2; ++j) EXPECT_EQ(pb.at(i, j), pa.at(src, j));
    EXPECT_EQ(pb.at(i, 21), pa.at(i, 21));
  }
}

TEST(ScenePatchesTest, InjectiveOnGeneratedScenes) {
  const auto world = generate_world(5, 500, 12);
  std::map<std::vector<double>, std::string> seen;
  for (const auto& ex : world) {
    const auto p = scene_to_patches<double>(*ex.scene());
    auto [it, inserted] = seen.emplace(p.storage(), ex.scene()->scene_id);
    if (!inserted) {
      // identical tensors only for identical scene contents
      const auto other = std::find_if(world.begin(), world.end(), [&](const Example& e) {
        return e.scene()->scene_id == it->second;
      });
      EXPECT_EQ(other->scene()->cells, ex.scene()->cells);
    }
  }
}

TEST(IngestTest, KvqgTripletMasksAnswer) {
  std::istringstream in(std::string(R"({"id":"k1","scene":)") + kSceneJson +
                        R"(,"question":"what can the red bag do","answer":"hold things",)"
                        R"("triplet":["container","CapableOf","hold things"],"split":"train"})");
  const auto ex = ingest_jsonl_stream(in, RecordFormat::kKvqg);
  ASSERT_EQ(ex.size(), 1u);
  const auto& t = ex[0].constraint.as_triplet();
  EXPECT_EQ(t.masked, MaskedSlot::kObject);
  EXPECT_EQ(render(ex[0].constraint), "container is capable of [MASK]");
}

TEST(IngestTest, KvqgLowercaseMaskTokenIsCanonicalised) {
  std::istringstream in(std::string(R"({"id":"k2","features":[[0.5,1.0]],"question":"q",)") +
                        R"("answer":"shelf","triplet":["[Mask]","AtLocation","library"],"split":"test"})");
  const auto ex = ingest_jsonl_stream(in, RecordFormat::kKvqg);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].constraint.as_triplet().masked, MaskedSlot::kSubject);
  EXPECT_EQ(ex[0].constraint.as_triplet().subject, "shelf");
  EXPECT_EQ(render(ex[0].constraint), "[MASK] is at location of library");
}

TEST(IngestTest, VqgCocoFansOutPerCaption) {
  std::istringstream in(std::string(R"({"id":"c1","scene":)") + kSceneJson +
                        R"(,"questions":["q1","q2","q3","q4","q5"],)"
                        R"("captions":["a","b","c","d","e"],"split":"val"})");
  const auto ex = ingest_jsonl_stream(in, RecordFormat::kVqgCoco);
  ASSERT_EQ(ex.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(ex[k].constraint.kind, ConstraintKind::kCaption);
    EXPECT_EQ(ex[k].question, "q" + std::to_string(k + 1));
  }
}

TEST(IngestTest, VqaAndFvqaConstraints) {
  std::istringstream vqa(std::string(R"({"id":"v","scene":)") + kSceneJson +
                         R"(,"question":"what is it","answer":"bench","split":"train"})");
  auto ev = ingest_jsonl_stream(vqa, RecordFormat::kVqa);
  EXPECT_EQ(render(ev.at(0).constraint), "The answer to the question is bench");
  std::istringstream fvqa(std::string(R"({"id":"f","scene":)") + kSceneJson +
                          R"(,"question":"what is it","answer":"x","fact":"bags hold things"})");
  auto ef = ingest_jsonl_stream(fvqa, RecordFormat::kFvqa);
  EXPECT_EQ(ef.at(0).constraint.kind, ConstraintKind::kFact);
  EXPECT_EQ(ef.at(0).split, Split::kTest);
}

TEST(IngestTest, MalformedLineReportsLineNumber) {
  std::istringstream in(std::string(R"({"id":"v","scene":)") + kSceneJson +
                        R"(,"question":"q","answer":"a","split":"train"})" "\n" R"({"id":"v2","quest)");
  try {
    ingest_jsonl_stream(in, RecordFormat::kVqa);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(IngestTest, RecordWithoutPixelsOrFeaturesRejected) {
  std::istringstream in(R"({"id":"v","question":"q","answer":"a","split":"train"})");
  EXPECT_THROW(ingest_jsonl_stream(in, RecordFormat::kVqa), FormatError);
}

TEST(IngestTest, UnknownFormatTagThrows) {
  EXPECT_THROW(ingest_jsonl("/nonexistent", "coco"), ValueError);
  EXPECT_THROW(ingest_jsonl("/nonexistent", "vqa"), IoError);
}

TEST(IngestTest, RoundTripThroughJsonl) {
  auto world = generate_world(21, 40, 12);
  world[3].visual = RawFeatures{{{1.5f, -2.0f}, {0.25f, 4.0f}}};
  const auto path = std::filesystem::temp_directory_path() / "convqg_roundtrip.jsonl";
  write_jsonl(path.string(), world);
  EXPECT_EQ(ingest_jsonl(path.string(), "kvqg"), world);

  std::vector<Example> captions = world;
  for (auto& ex : captions) ex.constraint = Constraint::caption("a scene with things");
  write_jsonl(path.string(), captions);
  EXPECT_EQ(ingest_jsonl(path.string(), "vqgcoco"), captions);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace convqg::toyworld
