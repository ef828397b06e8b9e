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

// Training loop, batch generation and evaluation.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "convqg/checkpoint.hpp"
#include "convqg/config.hpp"
#include "convqg/decode.hpp"
#include "convqg/metrics.hpp"
#include "convqg/objective.hpp"
#include "convqg/optim.hpp"
#include "convqg/records.hpp"
#include "convqg/toyworld.hpp"

namespace convqg {

struct Dataset {
  std::vector<toyworld::Example> train;
  std::vector<toyworld::Example> val;
  std::vector<toyworld::Example> test;
};

inline Dataset load_dataset(const RunConfig& c) {
  Dataset d;
  if (c.train_path.empty()) throw ValueError("config has no train path");
  d.train = toyworld::ingest_jsonl(c.train_path, c.format);
  if (!c.val_path.empty()) d.val = toyworld::ingest_jsonl(c.val_path, c.format);
  if (!c.test_path.empty()) d.test = toyworld::ingest_jsonl(c.test_path, c.format);
  if (d.train.empty()) throw ValueError("training set '" + c.train_path + "' is empty");
  return d;
}

// Split a generated world into the three sets.
inline Dataset split_world(const std::vector<toyworld::Example>& world) {
  return {toyworld::filter_split(world, toyworld::Split::kTrain),
          toyworld::filter_split(world, toyworld::Split::kVal),
          toyworld::filter_split(world, toyworld::Split::kTest)};
}

// Questions and rendered constraints of the training set.
inline Vocab build_vocab(const std::vector<toyworld::Example>& train) {
  std::vector<std::string> text;
  text.reserve(train.size() * 2);
  for (const auto& ex : train) {
    text.push_back(ex.question);
    text.push_back(render(ex.constraint));
  }
  return Vocab::build(text);
}

inline std::vector<TrainingExample> prepare_all(const std::vector<toyworld::Example>& examples,
                                                const Vocab& vocab, const ModelConfig& config,
                                                const SentenceEmbedder& embedder) {
  std::vector<TrainingExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(prepare_example(ex, vocab, config, embedder));
  return out;
}

// CONVQG_THREADS, else the hardware concurrency; at least 1.
inline int worker_threads() {
  if (const char* env = std::getenv("CONVQG_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw ValueError("CONVQG_THREADS must be a positive integer");
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) over `threads` workers; the first exception wins.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const int workers = static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// One record per example, sorted by id.
inline std::vector<GeneratedRecord> generate_all(QuestionModel<float>& model, const Vocab& vocab,
                                                 const std::vector<toyworld::Example>& examples,
                                                 int beams, int threads = worker_threads()) {
  std::vector<GeneratedRecord> out(examples.size());
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    const auto& ex = examples[i];
    const auto g = generate(model, vocab, ex, beams);
    out[i] = {ex.id, std::string(constraint_kind_name(ex.constraint.kind)), render(ex.constraint),
              g.question, g.score};
  });
  std::stable_sort(out.begin(), out.end(),
                   [](const GeneratedRecord& a, const GeneratedRecord& b) { return a.id < b.id; });
  return out;
}

inline std::map<std::string, std::vector<std::string>> references_of(
    const std::vector<toyworld::Example>& examples) {
  std::map<std::string, std::vector<std::string>> refs;
  for (const auto& ex : examples) refs[ex.id].push_back(ex.question);
  return refs;
}

inline metrics::Report evaluate_generated(const std::vector<GeneratedRecord>& generated,
                                          const std::vector<toyworld::Example>& examples) {
  return metrics::evaluate(align_corpus(generated, references_of(examples)));
}

struct EpochStats {
  int epoch = 0;
  double beta = 0.0;
  double cl_img = 0.0;
  double cl_txt = 0.0;
  double cl = 0.0;
  double cel = 0.0;
  double total = 0.0;
  double val_cel = std::numeric_limits<double>::quiet_NaN();
  double val_bleu4 = std::numeric_limits<double>::quiet_NaN();
  std::size_t steps = 0;
};

struct TrainResult {
  QuestionModel<float> model;
  Vocab vocab;
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  std::uint32_t init_hash = 0;
  std::uint32_t final_hash = 0;
};

inline nlohmann::json to_json(const LossBreakdown& b) {
  return {{"cl_img", b.cl_img}, {"cl_txt", b.cl_txt}, {"cl", b.cl},
          {"cel", b.cel},       {"beta", b.beta_used}, {"total", b.total}};
}

inline nlohmann::json to_json(const EpochStats& e) {
  nlohmann::json j = {{"event", "epoch"}, {"epoch", e.epoch}, {"beta", e.beta},   {"cl_img", e.cl_img},
                      {"cl_txt", e.cl_txt}, {"cl", e.cl},    {"cel", e.cel},     {"total", e.total},
                      {"steps", e.steps}};
  if (!std::isnan(e.val_cel)) j["val_cel"] = e.val_cel;
  if (!std::isnan(e.val_bleu4)) j["val_bleu4"] = e.val_bleu4;
  return j;
}

// Mean CEL over a set, without recording gradients.
inline double mean_cel(QuestionModel<float>& model, const std::vector<TrainingExample>& set,
                       const LossConfig& loss, int epoch, int batch_size) {
  if (set.empty()) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  for (std::size_t lo = 0; lo < set.size(); lo += batch_size) {
    const std::size_t n = std::min<std::size_t>(batch_size, set.size() - lo);
    grad::Graph<float> g(false);
    const auto [loss_var, b] = batch_loss(g, model, std::span<const TrainingExample>(set.data() + lo, n), loss, epoch);
    sum += b.cel * static_cast<double>(n);
  }
  return sum / static_cast<double>(set.size());
}

struct TrainOptions {
  std::ostream* log = nullptr;  // JSONL
  bool write_checkpoints = true;
};

// Seeded init, seeded per-epoch shuffle, AdamW. With an out_dir, writes
// epoch<k>.ckpt, best.ckpt and final.ckpt there.
inline TrainResult train(const RunConfig& config, const Dataset& data, const TrainOptions& opt = {}) {
  config.validate();
  if (data.train.empty()) throw ValueError("training set is empty");
  const HashedSentenceEmbedder embedder(static_cast<std::size_t>(config.model.d_sent));
  Vocab vocab = build_vocab(data.train);
  const auto train_set = prepare_all(data.train, vocab, config.model, embedder);
  const auto val_set = prepare_all(data.val, vocab, config.model, embedder);

  TrainResult result{QuestionModel<float>(config.model, vocab.size(), config.seed), std::move(vocab), {}, -1, 0, 0};
  auto& model = result.model;
  result.init_hash = parameter_hash(model);

  const bool save = opt.write_checkpoints && !config.out_dir.empty();
  if (save) std::filesystem::create_directories(config.out_dir);
  const nlohmann::json run_meta = {{"run", to_json(config)}, {"init_hash", result.init_hash}};
  auto ckpt = [&](const std::string& name) { return (std::filesystem::path(config.out_dir) / name).string(); };
  if (opt.log) *opt.log << nlohmann::json{{"event", "start"}, {"config", to_json(config)}, {"init_hash", result.init_hash}}.dump() << '\n';

  grad::AdamW<float> optimizer({config.lr, config.weight_decay});
  auto params = model.trainable();
  std::mt19937_64 order_rng(config.seed ^ 0x5348554646ULL);
  std::vector<std::size_t> order(train_set.size());
  std::vector<TrainingExample> batch;
  double best_score = std::numeric_limits<double>::infinity();
  std::size_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), order_rng);
    EpochStats stats;
    stats.epoch = epoch;
    stats.beta = config.loss.variant == Variant::kB ? 0.0 : beta_at(config.loss.beta, epoch);
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(train_set[order[k]]);
      model.zero_grad();
      grad::Graph<float> g;
      auto [loss, b] = batch_loss(g, model, std::span<const TrainingExample>(batch), config.loss, epoch);
      if (!std::isfinite(b.total)) {
        throw ValueError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
      }
      g.backward(loss);
      optimizer.step(params);
      if (opt.log) {
        auto j = to_json(b);
        j["event"] = "step";
        j["step"] = step;
        j["epoch"] = epoch;
        *opt.log << j.dump() << '\n';
      }
      stats.cl_img += b.cl_img;
      stats.cl_txt += b.cl_txt;
      stats.cl += b.cl;
      stats.cel += b.cel;
      stats.total += b.total;
      ++stats.steps;
      ++step;
    }
    const double n = static_cast<double>(stats.steps);
    stats.cl_img /= n;
    stats.cl_txt /= n;
    stats.cl /= n;
    stats.cel /= n;
    stats.total /= n;

    stats.val_cel = mean_cel(model, val_set, config.loss, epoch, config.batch_size);
    double score = stats.val_cel;
    if (config.select_by == "val_bleu4" && !data.val.empty()) {
      const auto gen = generate_all(model, result.vocab, data.val, config.beams);
      stats.val_bleu4 = metrics::bleu(align_corpus(gen, references_of(data.val)), 4);
      score = -stats.val_bleu4;
    }
    if (opt.log) *opt.log << to_json(stats).dump() << '\n';
    result.epochs.push_back(stats);

    const bool better = data.val.empty() ? true : score < best_score;
    if (better) {
      best_score = score;
      result.best_epoch = epoch;
    }
    if (save) {
      nlohmann::json meta = run_meta;
      meta["epoch"] = epoch;
      save_model(ckpt("epoch" + std::to_string(epoch) + ".ckpt"), model, result.vocab, meta);
      if (better) save_model(ckpt("best.ckpt"), model, result.vocab, meta);
    }
  }
  result.final_hash = parameter_hash(model);
  if (save) {
    nlohmann::json meta = run_meta;
    meta["epoch"] = config.epochs - 1;
    meta["best_epoch"] = result.best_epoch;
    save_model(ckpt("final.ckpt"), model, result.vocab, meta);
  }
  return result;
}

// Epoch-mean training loss strictly decreasing.
inline bool loss_decreasing(const std::vector<EpochStats>& epochs) {
  for (std::size_t e = 1; e < epochs.size(); ++e) {
    if (!(epochs[e].total < epochs[e - 1].total)) return false;
  }
  return true;
}

}  // namespace convqg
