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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "convqg/metrics.hpp"
#include "convqg/records.hpp"
#include "json.hpp"

namespace convqg::metrics {
namespace {

const std::string kFixtures = CONVQG_FIXTURE_DIR;

EvalCorpus one(std::string cand, std::vector<std::string> refs) { return {{"x", std::move(cand), std::move(refs)}}; }

EvalCorpus load_fixture() {
  EvalCorpus c;
  for_each_jsonl(kFixtures + "/metrics_corpus.jsonl", [&](const nlohmann::json& j, std::size_t) {
    c.push_back({j["id"], j["candidate"], j["references"].get<std::vector<std::string>>()});
  });
  return c;
}

TEST(StemTest, SuffixStripper) {
  EXPECT_EQ(stem("holding"), "hold");
  EXPECT_EQ(stem("used"), "us");
  EXPECT_EQ(stem("boxes"), "box");
  EXPECT_EQ(stem("cups"), "cup");
  EXPECT_EQ(stem("is"), "is");
  EXPECT_EQ(stem("bed"), "bed");
}

TEST(BleuTest, HandExamples) {
  EXPECT_DOUBLE_EQ(bleu(one("what is the red cup", {"what is the red cup"}), 4), 1.0);
  EXPECT_NEAR(bleu(one("the cat", {"the cat sat"}), 1), std::exp(1.0 - 1.5), 1e-12);
  EXPECT_NEAR(bleu(one("the cat", {"the cat sat"}), 1), 0.60653, 1e-5);
  EXPECT_EQ(bleu(one("a b", {"c d"}), 1), 0.0);
  EXPECT_EQ(bleu(one("a b c", {"a c b"}), 3), 0.0);  // no smoothing
  EXPECT_THROW(bleu({}, 1), ValueError);
  EXPECT_THROW(bleu(one("a", {"a"}), 5), ValueError);
  EXPECT_THROW(bleu(one("a", {}), 1), ValueError);
}

TEST(BleuTest, ClippedCounts) {
  // "the" appears 4 times in the candidate but at most twice in a reference
  EXPECT_NEAR(bleu(one("the the the the", {"the cat the mat"}), 1), 0.5, 1e-12);
}

TEST(RougeTest, HandExamples) {
  EXPECT_DOUBLE_EQ(rouge_l(one("what is it", {"what is it"})), 1.0);
  EXPECT_NEAR(rouge_l(one("a b c", {"a c d"})), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(rouge_l(one("a b", {"c d"})), 0.0);
  EXPECT_NEAR(rouge_l(one("a b c", {"x y", "a c d"})), 2.0 / 3.0, 1e-12);
}

TEST(MeteorTest, HandExamples) {
  EXPECT_NEAR(meteor_lite(one("a b c", {"a b c"})), 1.0 - 0.5 / 27.0, 1e-12);
  EXPECT_NEAR(meteor_lite(one("a b c", {"a b c"})), 0.98148, 1e-5);
  EXPECT_EQ(meteor_lite(one("a b", {"c d"})), 0.0);
  EXPECT_NEAR(meteor_lite(one("b a", {"a b"})), 0.5, 1e-12);
  // stems match: "cups" ~ "cup"
  EXPECT_NEAR(meteor_lite(one("red cups here", {"red cup here"})), 1.0 - 0.5 / 27.0, 1e-12);
}

TEST(CiderTest, HandExamples) {
  // instance 1: candidate equals its reference, none of its n-grams appear in
  // instance 2, and it has four tokens so every order contributes
  const EvalCorpus c = {{"1", "red cup on table", {"red cup on table"}}, {"2", "blue lamp", {"green ball"}}};
  const auto s = cider_instances(c);
  EXPECT_NEAR(s[0], 10.0, 1e-12);
  EXPECT_EQ(s[1], 0.0);
  EXPECT_NEAR(cider(c), 5.0, 1e-12);
  EXPECT_THROW(cider(one("a", {"a"})), ValueError);
}

TEST(CiderTest, DeterministicUnderRepetition) {
  const EvalCorpus c = {{"1", "red red cup cup on on", {"red cup on table"}}, {"2", "blue blue lamp", {"green ball"}}};
  const double a = cider(c);
  EXPECT_EQ(a, cider(c));
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 10.0);
}

TEST(OracleTest, FixtureMatchesBruteForceOracle) {
  const auto corpus = load_fixture();
  ASSERT_EQ(corpus.size(), 20u);
  std::ifstream in(kFixtures + "/metrics_expected.json");
  const auto expected = nlohmann::json::parse(in);
  const auto got = to_json(evaluate(corpus));
  ASSERT_EQ(got.size(), 7u);
  for (const auto& [key, value] : expected.items()) {
    EXPECT_NEAR(got.at(key).get<double>(), value.get<double>(), 1e-9) << key;
  }
}

TEST(PropertyTest, IdentityCorpus) {
  auto corpus = load_fixture();
  for (auto& inst : corpus) inst.references = {inst.candidate};
  const auto r = evaluate(corpus);
  for (double b : r.bleu) EXPECT_EQ(b, 1.0);
  EXPECT_EQ(r.rouge_l, 1.0);
  for (const auto& inst : corpus) {
    if (normalize_tokens(inst.candidate).size() >= 3) {
      EXPECT_GE(meteor_lite(one(inst.candidate, {inst.candidate})), 0.98);
    }
  }
}

TEST(PropertyTest, RangesAndDeterminism) {
  const auto corpus = load_fixture();
  const auto a = evaluate(corpus), b = evaluate(corpus);
  EXPECT_EQ(to_json(a), to_json(b));
  for (double v : a.bleu) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_LE(a.rouge_l, 1.0);
  EXPECT_LE(a.meteor_lite, 1.0);
  EXPECT_LE(a.cider, 10.0);
}

TEST(PropertyTest, IrrelevantReferenceNeverHurtsMaxMetrics) {
  const auto corpus = load_fixture();
  for (const auto& inst : corpus) {
    auto more = one(inst.candidate, inst.references);
    more[0].references.push_back("zebra giraffe unrelated words entirely");
    EXPECT_GE(rouge_l(more), rouge_l(one(inst.candidate, inst.references))) << inst.id;
    EXPECT_GE(meteor_lite(more), meteor_lite(one(inst.candidate, inst.references))) << inst.id;
  }
}

TEST(PropertyTest, IrrelevantReferenceAndBleu) {
  // Precisions only grow; a reference that is not closer in length leaves the
  // brevity penalty alone, so BLEU cannot drop.
  const auto corpus = load_fixture();
  for (const auto& inst : corpus) {
    auto more = one(inst.candidate, inst.references);
    const auto longest = std::max_element(inst.references.begin(), inst.references.end(),
                                          [](const std::string& a, const std::string& b) {
                                            return normalize_tokens(a).size() < normalize_tokens(b).size();
                                          });
    const std::size_t extra = normalize_tokens(*longest).size() + normalize_tokens(inst.candidate).size() + 3;
    std::string filler;
    for (std::size_t k = 0; k < extra; ++k) filler += "zz" + std::to_string(k) + " ";
    more[0].references.push_back(filler);
    EXPECT_GE(bleu(more, 1), bleu(one(inst.candidate, inst.references), 1)) << inst.id;
  }
  // With closest-length brevity penalty the general claim does not hold: a
  // longer reference closer in length than a short one switches the penalty on.
  const double before = bleu(one("a b c d e", {"a b c"}), 1);
  const double after = bleu(one("a b c d e", {"a b c", "x y z w v u"}), 1);
  EXPECT_EQ(before, 0.6);
  EXPECT_LT(after, before);
}

TEST(PreferenceTest, FixtureTotals) {
  const auto records = read_preferences(kFixtures + "/preferences_500.jsonl");
  ASSERT_EQ(records.size(), 500u);
  const auto h = preference_histogram(records, 10);
  EXPECT_EQ(h.totals.n_a, 236);
  EXPECT_EQ(h.totals.n_b, 183);
  EXPECT_EQ(h.totals.n_similar, 81);
  int sum = 0;
  for (const auto& b : h.bins) sum += b.total();
  EXPECT_EQ(sum, 500);
  EXPECT_EQ(h.bins.size(), 10u);
}

TEST(PreferenceTest, IdenticalPairsFillTopBin) {
  const auto records = read_preferences(kFixtures + "/preferences_identical.jsonl");
  for (int bins : {1, 5, 10}) {
    const auto h = preference_histogram(records, bins);
    EXPECT_EQ(h.bins.back().total(), static_cast<int>(records.size()));
    EXPECT_EQ(h.bins.back().high, 1.0);
  }
}

TEST(PreferenceTest, SingleRecord) {
  const auto h = preference_histogram({{"what is the cup", "what is the lamp", Choice::kB}}, 4);
  int nonzero = 0;
  for (const auto& b : h.bins) {
    if (b.total() == 0) continue;
    ++nonzero;
    EXPECT_EQ(b.proportion(Choice::kB), 1.0);
    EXPECT_EQ(b.proportion(Choice::kA), 0.0);
  }
  EXPECT_EQ(nonzero, 1);
  EXPECT_THROW(preference_histogram({}, 4), ValueError);
  EXPECT_THROW(preference_histogram({{"", "q", Choice::kA}}, 4), ValueError);
}

TEST(PreferenceTest, EmptyQuestionReportsLine) {
  const auto path = std::filesystem::temp_directory_path() / "convqg_pref_bad.jsonl";
  {
    std::ofstream out(path);
    out << R"({"question_a":"a","question_b":"b","choice":"A"})" << "\n";
    out << R"({"question_a":"","question_b":"b","choice":"A"})" << "\n";
  }
  try {
    read_preferences(path.string());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  std::filesystem::remove(path);
}

TEST(RecordsTest, AlignmentListsMissingIds) {
  std::vector<GeneratedRecord> gen = {{"a", "", "", "q", 0}, {"b", "", "", "q", 0}, {"c", "", "", "q", 0}};
  std::map<std::string, std::vector<std::string>> refs = {{"a", {"q"}}};
  try {
    align_corpus(gen, refs);
    FAIL() << "expected ValueError";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("b c"), std::string::npos);
  }
}

}  // namespace
}  // namespace convqg::metrics
