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

// convqg: data generation, training, generation, evaluation, ablation,
// sweeps and preference analysis.
//
// Failures print one line, `convqg-error: <kind>: <message>`, and exit 1
// (2 for usage errors).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "convqg/experiments.hpp"

namespace fs = std::filesystem;
using namespace convqg;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs, batch_size, beams;
  std::optional<double> lr, weight_decay, alpha, margin;
  std::optional<std::string> beta, variant, train, val, test, out, select_by, format;

  void attach(CLI::App* app, bool with_variant) {
    app->add_option("--config", config, "flat JSON run config");
    app->add_option("--seed", seed);
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr", lr);
    app->add_option("--weight-decay", weight_decay);
    app->add_option("--alpha", alpha);
    app->add_option("--margin", margin);
    app->add_option("--beta", beta, "geometric10[:start], fixed:<v> or a number");
    if (with_variant) app->add_option("--variant", variant, "B, I, T or IT");
    app->add_option("--beams", beams);
    app->add_option("--select-by", select_by, "val_cel or val_bleu4");
    app->add_option("--format", format, "record format of the data files");
    app->add_option("--train", train);
    app->add_option("--val", val);
    app->add_option("--test", test);
    app->add_option("--out", out, "output directory");
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) c.seed = *seed;
    if (epochs) c.epochs = *epochs;
    if (batch_size) c.batch_size = *batch_size;
    if (beams) c.beams = *beams;
    if (lr) c.lr = *lr;
    if (weight_decay) c.weight_decay = *weight_decay;
    if (alpha) c.loss.alpha = *alpha;
    if (margin) c.loss.margin = *margin;
    if (beta) c.loss.beta = BetaSchedule::parse(*beta);
    if (variant) c.loss.variant = parse_variant(*variant);
    if (select_by) c.select_by = *select_by;
    if (format) c.format = *format;
    if (train) c.train_path = *train;
    if (val) c.val_path = *val;
    if (test) c.test_path = *test;
    if (out) c.out_dir = *out;
    c.validate();
    return c;
  }
};

// Output file, or stdout for "" and "-".
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (path.empty() || path == "-") return;
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    file_.open(path, std::ios::binary);
    if (!file_) throw IoError("cannot open '" + path + "' for writing");
  }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
  void close() {
    if (!file_.is_open()) return;
    file_.close();
    if (!file_) throw IoError("failed writing output");
  }

 private:
  std::ofstream file_;
};

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValueError(std::string("invalid ") + what + " value '" + item + "'");
    }
  }
  return out;
}

std::vector<BetaSchedule> parse_beta_list(const std::string& s) {
  std::vector<BetaSchedule> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(BetaSchedule::parse(item));
  return out;
}

void cmd_gen_data(std::uint64_t seed, int scenes, int ontology, const std::string& out_dir) {
  const auto world = toyworld::generate_world(seed, scenes, ontology);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  nlohmann::json manifest = {{"seed", seed}, {"scenes", scenes}, {"ontology_size", ontology}};
  for (auto split : {toyworld::Split::kTrain, toyworld::Split::kVal, toyworld::Split::kTest}) {
    const auto part = toyworld::filter_split(world, split);
    const std::string name(toyworld::split_name(split));
    toyworld::write_jsonl((fs::path(out_dir) / (name + ".jsonl")).string(), part);
    std::set<std::string> scene_ids;
    for (const auto& ex : part) scene_ids.insert(ex.scene()->scene_id);
    manifest["splits"][name] = {{"file", name + ".jsonl"},
                                {"scenes", scene_ids.size()},
                                {"examples", part.size()}};
  }
  std::ofstream m(fs::path(out_dir) / "manifest.json", std::ios::binary);
  m << manifest.dump(2) << '\n';
  if (!m) throw IoError("failed writing manifest in '" + out_dir + "'");
  std::cout << manifest.dump() << '\n';
}

void cmd_train(const RunConfig& c) {
  const auto data = load_dataset(c);
  std::ofstream log;
  if (!c.out_dir.empty()) {
    fs::create_directories(c.out_dir);
    log.open(fs::path(c.out_dir) / "train_log.jsonl", std::ios::binary);
    if (!log) throw IoError("cannot write training log in '" + c.out_dir + "'");
  }
  const auto r = train(c, data, {log.is_open() ? &log : nullptr, true});
  nlohmann::json summary = {{"init_hash", r.init_hash}, {"final_hash", r.final_hash}, {"best_epoch", r.best_epoch}};
  for (const auto& e : r.epochs) summary["epochs"].push_back(to_json(e));
  std::cout << summary.dump() << '\n';
}

void cmd_generate(const std::string& checkpoint, const std::string& data_path, const std::string& format,
                  int beams, const std::string& out) {
  if (beams < 1) throw ValueError("beams must be >= 1");
  auto loaded = load_model(checkpoint);
  const auto examples = toyworld::ingest_jsonl(data_path, format);
  const auto gen = generate_all(loaded.model, loaded.vocab, examples, beams);
  Sink sink(out);
  for (const auto& g : gen) sink.stream() << to_json(g).dump() << '\n';
  sink.close();
}

void cmd_eval(const std::string& generated, const std::string& references, const std::string& out) {
  const auto corpus = align_corpus(read_generated(generated), read_references(references));
  Sink sink(out);
  sink.stream() << to_json(metrics::evaluate(corpus)).dump() << '\n';
  sink.close();
}

void cmd_ablate(const RunConfig& c, const std::string& csv) {
  const auto data = load_dataset(c);
  const auto rows = run_ablation(c, data, &std::cerr);
  Sink sink(csv);
  write_ablation_csv(sink.stream(), rows);
  sink.close();
}

void cmd_sweep(const RunConfig& c, const SweepGrid& grid, const std::string& csv) {
  const auto settings = sweep_settings(c, grid);  // validates the whole grid first
  const auto data = load_dataset(c);
  const auto rows = run_sweep(settings, data, &std::cerr);
  Sink sink(csv);
  write_sweep_csv(sink.stream(), settings, rows);
  sink.close();
}

void cmd_analyze(const std::string& records, int bins, const std::string& out) {
  const auto h = metrics::preference_histogram(read_preferences(records), bins);
  Sink sink(out);
  write_histogram_csv(sink.stream(), h);
  sink.close();
}

int fail(const char* kind, const std::string& what) {
  std::string msg = what;
  for (char& ch : msg) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::cerr << "convqg-error: " << kind << ": " << msg << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convqg: constrained visual question generation at desk scale"};
  app.require_subcommand(1);

  std::uint64_t gd_seed = 7;
  int gd_scenes = 2000, gd_ontology = static_cast<int>(toyworld::kCategories.size());
  std::string gd_out;
  auto* gen_data = app.add_subcommand("gen-data", "write a synthetic corpus");
  gen_data->add_option("--seed", gd_seed);
  gen_data->add_option("--scenes", gd_scenes);
  gen_data->add_option("--ontology", gd_ontology, "number of object categories");
  gen_data->add_option("--out", gd_out)->required();

  Overrides train_ov, ablate_ov, sweep_ov;
  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_ov.attach(train_cmd, true);

  std::string g_ckpt, g_data, g_out, g_format = "kvqg";
  int g_beams = 3;
  auto* generate_cmd = app.add_subcommand("generate", "generate questions for a data file");
  generate_cmd->add_option("--checkpoint", g_ckpt)->required();
  generate_cmd->add_option("--data", g_data)->required();
  generate_cmd->add_option("--format", g_format);
  generate_cmd->add_option("--beams", g_beams);
  generate_cmd->add_option("--out", g_out, "JSONL output (default stdout)");

  std::string e_gen, e_refs, e_out;
  auto* eval_cmd = app.add_subcommand("eval", "score generations against references");
  eval_cmd->add_option("--generated", e_gen)->required();
  eval_cmd->add_option("--references", e_refs)->required();
  eval_cmd->add_option("--out", e_out, "JSON output (default stdout)");

  std::string a_csv;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and score variants B, I, T, IT");
  ablate_ov.attach(ablate_cmd, false);
  ablate_cmd->add_option("--csv", a_csv, "CSV output (default stdout)");

  std::string s_csv, s_alpha = "0.2,0.5,0.8", s_beta = "fixed:10,fixed:100,geometric10", s_margin = "0.2,0.5,0.8";
  auto* sweep_cmd = app.add_subcommand("sweep", "one-factor-at-a-time sweep over alpha, beta, margin");
  sweep_ov.attach(sweep_cmd, true);
  sweep_cmd->add_option("--alpha-grid", s_alpha);
  sweep_cmd->add_option("--beta-grid", s_beta);
  sweep_cmd->add_option("--margin-grid", s_margin);
  sweep_cmd->add_option("--csv", s_csv, "CSV output (default stdout)");

  std::string p_records, p_out;
  int p_bins = 10;
  auto* analyze_cmd = app.add_subcommand("analyze-preferences", "histogram of preference judgements");
  analyze_cmd->add_option("--records", p_records)->required();
  analyze_cmd->add_option("--bins", p_bins);
  analyze_cmd->add_option("--out", p_out, "CSV output (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    if (*gen_data) {
      cmd_gen_data(gd_seed, gd_scenes, gd_ontology, gd_out);
    } else if (*train_cmd) {
      cmd_train(train_ov.resolve());
    } else if (*generate_cmd) {
      cmd_generate(g_ckpt, g_data, g_format, g_beams, g_out);
    } else if (*eval_cmd) {
      cmd_eval(e_gen, e_refs, e_out);
    } else if (*ablate_cmd) {
      cmd_ablate(ablate_ov.resolve(), a_csv);
    } else if (*sweep_cmd) {
      SweepGrid grid{parse_list(s_alpha, "alpha"), parse_beta_list(s_beta), parse_list(s_margin, "margin")};
      cmd_sweep(sweep_ov.resolve(), grid, s_csv);
    } else if (*analyze_cmd) {
      cmd_analyze(p_records, p_bins, p_out);
    }
  } catch (const IoError& e) {
    return fail("io", e.what());
  } catch (const FormatError& e) {
    return fail("format", e.what());
  } catch (const DimensionError& e) {
    return fail("dimension", e.what());
  } catch (const ValueError& e) {
    return fail("value", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", e.what());
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
  return 0;
}
