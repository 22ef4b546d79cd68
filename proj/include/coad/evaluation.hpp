#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "coad/dialogue.hpp"
#include "coad/training.hpp"

namespace coad {

struct EpisodeMetrics {
  int hit = 0;
  double recall = 0;
  int turns = 0;
};

// With `positive_only` the recall denominator counts only implicit symptoms
// stated present. Recall is 1 when the denominator is empty.
EpisodeMetrics episode_metrics(const EpisodeResult& episode, const PatientRecord& record, bool positive_only = false);

// 2 Rc Ac / (Rc + Ac), or 0 when both are 0.
double combined_score(double ac, double rc);

struct ProtocolViolations {
  long over_budget = 0;     // limited mode: turns > T_max
  long short_fixed = 0;     // fixed mode: turns != T_max without exhausting the vocabulary
  long repeats = 0;         // an inquiry repeated or naming an explicit symptom
  long exhausted = 0;       // fixed mode stopped early because nothing was left to ask

  long total() const { return over_budget + short_fixed + repeats; }
};

struct SeedMetrics {
  std::uint64_t seed = 0;
  double ac = 0, rc = 0, cs = 0, t = 0;
  std::size_t episodes = 0;
  ProtocolViolations violations;
};

struct EvalOptions {
  TurnMode mode = TurnMode::limited;
  int t_max = 10;
  bool recall_positive_only = false;
  InquiryOptions inquiry;
};

// Metrics of one model on a test set. Throws ConfigError on an empty set.
template <typename T>
SeedMetrics evaluate(const CoadModel<T>& model, const Vocab& vocab, std::span<const PatientRecord> test,
                     const EvalOptions& options, std::uint64_t seed = 0);

struct CellMetrics {
  std::string variant;
  TurnMode mode = TurnMode::limited;
  int t_max = 0;
  double ac = 0, rc = 0, cs = 0, t = 0;
  std::vector<SeedMetrics> per_seed;

  // Averages the per-seed values; Cs is recomputed from the mean Ac and Rc.
  static CellMetrics aggregate(std::string variant, TurnMode mode, int t_max, std::vector<SeedMetrics> per_seed);
};

struct ProtocolCell {
  TurnMode mode = TurnMode::limited;
  int t_max = 10;
};

struct ExperimentOptions {
  std::vector<Variant> variants{Variant::full, Variant::no_d, Variant::no_s, Variant::plain};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<ProtocolCell> protocol{{TurnMode::limited, 10}};
  bool recall_positive_only = false;
  InquiryOptions inquiry;
  bool parallel = true;  // train (variant, seed) jobs concurrently
};

struct MetricsReport {
  std::vector<CellMetrics> cells;
  nlohmann::json config;

  const CellMetrics& cell(const std::string& variant, TurnMode mode, int t_max) const;

  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  // Rows are variants, columns are Ac/Rc/Cs/T per (mode, T_max).
  std::string format_table() const;
};

// Trains every (variant, seed) pair and evaluates each protocol cell on the
// test split. The model seed follows the training seed.
MetricsReport run_experiment(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
                             const ExperimentOptions& options);

}  // namespace coad
