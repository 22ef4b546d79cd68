#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "coad/corpus.hpp"

namespace coad {

// Symptom label carried by the final repeated position.
enum class FinalLabel { end, ignore };

// How per-position loss weights are derived.
//  decision       1/(group size) for every probe, 1 for the final position
//  paper_wk       1/(M - T + 1) for a probe targeting implicit symptom T (1-based)
//  paper_wkprime  1/(M - n - 1) for probes of group n, denominator clamped to >= 1
enum class WeightFormula { decision, paper_wk, paper_wkprime };

FinalLabel parse_final_label(const std::string& name);
WeightFormula parse_weight_formula(const std::string& name);
std::string to_string(FinalLabel v);
std::string to_string(WeightFormula v);

struct AugmentOptions {
  FinalLabel final_label = FinalLabel::end;
  WeightFormula weights = WeightFormula::decision;
};

// Square visibility matrix: (q, k) true iff query q may attend to key k.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(std::size_t n) : n_(n), bits_(n * n, 0) {}

  static AttentionMask causal(std::size_t n);

  std::size_t size() const { return n_; }
  bool operator()(std::size_t q, std::size_t k) const { return bits_[q * n_ + k] != 0; }
  void set(std::size_t q, std::size_t k, bool visible = true) { bits_[q * n_ + k] = visible ? 1 : 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  bool operator==(const AttentionMask&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

// M' = M(M+1)/2 + 1
inline int expanded_length(int m) { return m * (m + 1) / 2 + 1; }

// 1-based position of the anchor of group k within the repeated region,
// (k+1)(2M-k)/2 for k < M, and M' for k == M.
inline int anchor_position(int m, int k) { return k == m ? expanded_length(m) : (k + 1) * (2 * m - k) / 2; }

struct RepeatedInput {
  std::vector<SymptomEntry> tokens;  // explicit prefix (N-1) then repeated region (M')
  std::vector<int> group_of;         // per repeated-region position, 0..M
  std::vector<int> anchors;          // 0-based repeated-region index of each group's last position
};

struct ExpandedSample {
  int n = 0;
  int m = 0;
  std::vector<SymptomEntry> plain_tokens;     // length N + M
  std::vector<SymptomEntry> repeated_tokens;  // length (N-1) + M'
  std::vector<int> group_of;                  // repeated region only
  std::vector<int> anchors;                   // repeated-region indices
  std::vector<int> s_labels;                  // repeated region: symptom id, END or kIgnore
  std::vector<int> d_labels;                  // repeated region: disease id or kIgnore
  std::vector<double> weights;                // repeated region
  AttentionMask mask;                         // full input length

  int prefix_length() const { return n - 1; }
  int repeated_length() const { return static_cast<int>(group_of.size()); }
  int input_length() const { return static_cast<int>(repeated_tokens.size()); }
};

// d-label per implicit symptom: d* when the prefix {s_E, s_I^1..K} is
// available, kIgnore otherwise. `record` must be part of `index`.
std::vector<int> align_d_labels(const PatientRecord& record, const PrefixIndex& index);

// Group g carries s_I^{g+1..M}; the final position carries END (or kIgnore).
std::vector<int> expand_s_labels(const PatientRecord& record, int end_id, FinalLabel final_label = FinalLabel::end);

std::vector<int> expand_d_labels(const PatientRecord& record, std::span<const int> aligned, const PrefixIndex& index);

RepeatedInput build_repeated_input(const PatientRecord& record);

AttentionMask build_attention_mask(int n, int m);

std::vector<double> compute_loss_weights(int m, WeightFormula formula = WeightFormula::decision);

ExpandedSample expand_record(const PatientRecord& record, const PrefixIndex& index, const Vocab& vocab,
                             const AugmentOptions& options = {});

// Text dump used by `coad inspect-sample`: one row per input position and a
// mask bitmap.
std::string format_sample(const ExpandedSample& sample, const Vocab& vocab);

}  // namespace coad
