#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "coad/augmentation.hpp"
#include "coad/corpus.hpp"
#include "coad/model.hpp"

namespace coad {

// full   expanded s-labels and d-labels on the repeated input
// no_d   expanded s-labels; disease only at the final position
// no_s   original next-symptom label per chain step; expanded d-labels
// plain  plain sequence: next-symptom labels and a final disease label
enum class Variant { full, no_d, no_s, plain };

Variant parse_variant(const std::string& name);
std::string to_string(Variant v);

struct TrainConfig {
  Variant variant = Variant::full;
  double lr = 1e-3;
  int batch_size = 32;
  int steps = 400;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
  WeightFormula weights = WeightFormula::decision;
  FinalLabel final_label = FinalLabel::end;

  // Throws ConfigError.
  void validate() const;

  // Per-dataset learning rate and batch size of the full-size setup:
  // dxy, muzhi, muzhi2, ped.
  static TrainConfig preset(const std::string& dataset);

  nlohmann::json to_json() const;
};

// One training sequence with per-position targets over the whole input.
struct SequenceExample {
  std::vector<SymptomEntry> tokens;
  std::vector<int> positions;
  AttentionMask mask;
  std::vector<int> s_target;     // symptom id, END or kIgnore
  std::vector<int> d_target;     // disease id or kIgnore
  std::vector<double> weight;    // 0 on unlabeled positions
  std::vector<int> next_target;  // at anchors: the original next symptom (END at the final one)
  std::vector<std::uint8_t> anchor;
  std::vector<std::uint8_t> final_position;

  std::size_t length() const { return tokens.size(); }
  bool operator==(const SequenceExample&) const = default;
};

SequenceExample to_example(const ExpandedSample& sample, const Vocab& vocab);

// Plain causal view of a record for the `plain` variant.
SequenceExample plain_example(const PatientRecord& record, const Vocab& vocab,
                              FinalLabel final_label = FinalLabel::end);

// Builds the per-record examples for a variant.
std::vector<SequenceExample> build_examples(std::span<const PatientRecord> records, const PrefixIndex& index,
                                            const Vocab& vocab, const TrainConfig& config);

struct Batch {
  ModelInput input;
  std::vector<std::size_t> lengths;  // unpadded length per sequence
  std::vector<int> s_target;
  std::vector<int> d_target;
  std::vector<double> weight;
  std::vector<int> next_target;
  std::vector<std::uint8_t> anchor;
  std::vector<std::uint8_t> final_position;
  std::vector<std::uint8_t> pad;

  std::size_t size() const { return input.batch; }
  std::size_t length() const { return input.length; }
};

// PAD positions carry kIgnore targets, zero weight, and are hidden from
// every real query; each PAD query sees only itself. Throws ShapeError when
// a sample is longer than `pad_to`.
Batch collate(std::span<const SequenceExample> samples, std::size_t pad_to, int pad_id);
Batch collate(std::span<const ExpandedSample> samples, std::size_t pad_to, const Vocab& vocab);

// Inverse of collate for one sequence.
SequenceExample uncollate(const Batch& batch, std::size_t index);

template <typename T>
struct LossTerms {
  tensor::Variable<T> total;
  tensor::Variable<T> symptom;
  tensor::Variable<T> disease;
};

// Each term is the mean over sequences of the per-sequence weighted mean
// cross-entropy; sequences without an active label are skipped.
template <typename T>
LossTerms<T> compute_loss(tensor::Tape<T>& tape, const ModelOutput<T>& outputs, const Batch& batch, Variant variant);

// Effective (target, weight) pairs a variant trains on, before per-sequence
// normalization. Exposed for tests.
struct VariantTargets {
  std::vector<int> s_target;
  std::vector<double> s_weight;
  std::vector<int> d_target;
  std::vector<double> d_weight;
};
VariantTargets variant_targets(const Batch& batch, Variant variant);

template <typename T>
class Adam {
 public:
  Adam(std::vector<tensor::Variable<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step();
  double lr() const { return lr_; }
  long steps() const { return t_; }

 private:
  std::vector<tensor::Variable<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

// Scales gradients so their global L2 norm is at most `max_norm`; returns the
// norm before clipping.
template <typename T>
double clip_grad_norm(std::span<const tensor::Variable<T>> params, double max_norm);

struct TrainLogEntry {
  long step = 0;
  int epoch = 0;
  double loss_total = 0;
  double loss_sym = 0;
  double loss_dis = 0;
  double lr = 0;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

template <typename T>
struct TrainResult {
  CoadModel<T> model;
  std::vector<TrainLogEntry> log;  // one entry per (possibly partial) epoch
  double initial_loss = 0;         // loss of the first batch before any update
};

// Teacher-forced optimization with Adam. Fixed seeds give identical results.
// Throws std::runtime_error naming the step when the loss becomes non-finite.
template <typename T>
TrainResult<T> train(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
                     std::ostream* log_out = nullptr);

// Fraction of non-final anchors whose argmax symptom logit equals the
// original next symptom (dropout off).
template <typename T>
double teacher_forced_accuracy(const CoadModel<T>& model, std::span<const SequenceExample> examples);

}  // namespace coad
