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

// Objective ablation (B, I, T, IT) and one-factor-at-a-time sweeps.

#pragma once

#include <array>
#include <filesystem>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "convqg/train.hpp"

namespace convqg {

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::kB, Variant::kI, Variant::kT, Variant::kIT};

struct RunOutcome {
  std::string label;
  RunConfig config;
  std::vector<EpochStats> epochs;
  std::uint32_t init_hash = 0;
  metrics::Report report;
};

inline std::string sub_dir(const std::string& out_dir, const std::string& name) {
  return out_dir.empty() ? std::string() : (std::filesystem::path(out_dir) / name).string();
}

// Trains, then scores the test set.
inline RunOutcome run_and_evaluate(const std::string& label, const RunConfig& config, const Dataset& data,
                                   std::ostream* log = nullptr) {
  if (data.test.empty()) throw ValueError("evaluation needs a non-empty test set");
  auto r = train(config, data, {log, !config.out_dir.empty()});
  const auto gen = generate_all(r.model, r.vocab, data.test, config.beams);
  if (!config.out_dir.empty()) {
    std::ofstream out(std::filesystem::path(config.out_dir) / "generated.jsonl", std::ios::binary);
    for (const auto& g : gen) out << to_json(g).dump() << '\n';
  }
  return {label, config, std::move(r.epochs), r.init_hash, evaluate_generated(gen, data.test)};
}

// All four variants from one seed and one initialisation.
inline std::vector<RunOutcome> run_ablation(const RunConfig& base, const Dataset& data,
                                            std::ostream* progress = nullptr) {
  base.validate();
  std::vector<RunOutcome> rows;
  for (Variant v : kAllVariants) {
    RunConfig c = base;
    c.loss.variant = v;
    c.out_dir = sub_dir(base.out_dir, std::string(variant_name(v)));
    std::ofstream log;
    if (!c.out_dir.empty()) {
      std::filesystem::create_directories(c.out_dir);
      log.open(std::filesystem::path(c.out_dir) / "train_log.jsonl", std::ios::binary);
    }
    rows.push_back(run_and_evaluate(std::string(variant_name(v)), c, data, log.is_open() ? &log : nullptr));
    if (rows.back().init_hash != rows.front().init_hash) {
      throw std::logic_error("ablation variants started from different parameters");
    }
    if (progress) {
      *progress << "variant " << variant_name(v) << " bleu4 " << rows.back().report.bleu[3] << std::endl;
    }
  }
  return rows;
}

struct SweepGrid {
  std::vector<double> alpha = {0.2, 0.5, 0.8};
  std::vector<BetaSchedule> beta = {BetaSchedule::fixed(10), BetaSchedule::fixed(100), BetaSchedule::geometric10()};
  std::vector<double> margin = {0.2, 0.5, 0.8};
};

struct SweepSetting {
  std::string parameter;
  std::string value;
  RunConfig config;
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// One row per grid value, other factors at their base values. Every setting
// is validated before anything runs.
inline std::vector<SweepSetting> sweep_settings(const RunConfig& base, const SweepGrid& grid) {
  if (grid.alpha.empty() && grid.beta.empty() && grid.margin.empty()) throw ValueError("sweep grid is empty");
  std::vector<SweepSetting> out;
  for (double a : grid.alpha) {
    RunConfig c = base;
    c.loss.alpha = a;
    out.push_back({"alpha", format_number(a), c});
  }
  for (const auto& b : grid.beta) {
    RunConfig c = base;
    c.loss.beta = b;
    out.push_back({"beta", b.kind == BetaSchedule::Kind::kGeometric10 && b.value == 10.0 ? "geometric10" : b.to_string(), c});
  }
  for (double m : grid.margin) {
    RunConfig c = base;
    c.loss.margin = m;
    out.push_back({"margin", format_number(m), c});
  }
  for (auto& s : out) {
    try {
      s.config.validate();
    } catch (const ValueError& e) {
      throw ValueError("sweep " + s.parameter + "=" + s.value + ": " + e.what());
    }
    s.config.out_dir = sub_dir(base.out_dir, s.parameter + "_" + s.value);
  }
  return out;
}

inline std::vector<RunOutcome> run_sweep(const std::vector<SweepSetting>& settings, const Dataset& data,
                                         std::ostream* progress = nullptr) {
  std::vector<RunOutcome> rows;
  for (const auto& s : settings) {
    rows.push_back(run_and_evaluate(s.parameter + "=" + s.value, s.config, data));
    if (progress) *progress << s.parameter << "=" << s.value << " bleu4 " << rows.back().report.bleu[3] << std::endl;
  }
  return rows;
}

inline constexpr const char* kMetricColumns = "bleu1,bleu2,bleu3,bleu4,rouge_l,meteor_lite,cider";

inline std::string metric_cells(const metrics::Report& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.bleu[0] << ',' << r.bleu[1] << ',' << r.bleu[2] << ',' << r.bleu[3] << ',' << r.rouge_l << ','
     << r.meteor_lite << ',' << r.cider;
  return os.str();
}

inline void write_ablation_csv(std::ostream& os, const std::vector<RunOutcome>& rows) {
  os << "variant,beta_enabled," << kMetricColumns << '\n';
  for (const auto& r : rows) {
    os << r.label << ',' << (r.config.loss.variant == Variant::kB ? 0 : 1) << ',' << metric_cells(r.report) << '\n';
  }
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepSetting>& settings,
                            const std::vector<RunOutcome>& rows) {
  os << "parameter,value," << kMetricColumns << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << settings[i].parameter << ',' << settings[i].value << ',' << metric_cells(rows[i].report) << '\n';
  }
}

inline void write_histogram_csv(std::ostream& os, const metrics::PreferenceHistogram& h) {
  os << "bin_low,bin_high,n_a,n_b,n_similar\n";
  for (const auto& b : h.bins) {
    os << b.low << ',' << b.high << ',' << b.n_a << ',' << b.n_b << ',' << b.n_similar << '\n';
  }
  os << "total,total," << h.totals.n_a << ',' << h.totals.n_b << ',' << h.totals.n_similar << '\n';
}

}  // namespace convqg
