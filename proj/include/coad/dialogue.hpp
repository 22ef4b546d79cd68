#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coad/corpus.hpp"
#include "coad/model.hpp"

namespace coad {

// limited  the agent may stop before the budget by emitting END
// fixed    exactly T_max inquiries (END masked until the budget is spent)
enum class TurnMode { limited, fixed };

TurnMode parse_turn_mode(const std::string& name);
std::string to_string(TurnMode mode);

struct InquiryOptions {
  bool mask_repeats = true;  // when false a repeated pick is treated as END
};

struct Diagnosis {
  int disease = -1;
  std::vector<double> probabilities;

  // (disease id, probability) pairs, most probable first, ties by id.
  std::vector<std::pair<int, double>> top(std::size_t k) const;
};

class DialogueSession {
 public:
  // Throws ConfigError on an empty explicit list, unknown ids, a negative
  // budget, or fixed mode with T_max = 0.
  DialogueSession(const Vocab& vocab, std::vector<SymptomEntry> explicit_symptoms, TurnMode mode, int t_max);

  TurnMode mode() const { return mode_; }
  int t_max() const { return t_max_; }
  int turns() const { return turns_; }
  const std::vector<SymptomEntry>& transcript() const { return transcript_; }
  std::size_t explicit_count() const { return explicit_count_; }
  std::vector<int> inquired() const;

  bool terminal() const { return diagnosis_.has_value(); }
  const std::optional<Diagnosis>& diagnosis() const { return diagnosis_; }
  std::optional<int> pending() const { return pending_; }
  bool stopped() const { return stopped_; }

  // True when diagnose() is allowed.
  bool ready_to_diagnose() const;
  // True when the symptom id already appears in the transcript.
  bool mentioned(int symptom) const;

  // State transitions; throw StateError when called out of order.
  void set_pending(int symptom);
  void stop();
  void answer(SymptomStatus status);
  void finish(Diagnosis diagnosis);

 private:
  int symptom_count_;
  TurnMode mode_;
  int t_max_;
  int turns_ = 0;
  std::size_t explicit_count_;
  std::vector<SymptomEntry> transcript_;
  std::vector<std::uint8_t> seen_;
  std::optional<int> pending_;
  bool stopped_ = false;
  std::optional<Diagnosis> diagnosis_;
};

class SimulatedPatient {
 public:
  explicit SimulatedPatient(PatientRecord record) : record_(std::move(record)) {}
  // Recorded status for symptoms of the record, uncertain otherwise.
  SymptomStatus respond(int symptom) const;
  const PatientRecord& record() const { return record_; }

 private:
  PatientRecord record_;
};

// Picks the next symptom (or END) for a session that is not terminal and has
// no pending inquiry. Records the choice in the session: a symptom becomes
// the pending inquiry, END stops it. Throws StateError otherwise.
template <typename T>
int next_inquiry(const CoadModel<T>& model, DialogueSession& session, const InquiryOptions& options = {});

// Masked symptom-head scores at the last transcript position; the decision
// rule behind next_inquiry, exposed for tests. Masked entries are -inf.
template <typename T>
std::vector<double> inquiry_scores(const CoadModel<T>& model, const DialogueSession& session,
                                   const InquiryOptions& options = {});

// Disease distribution at the last transcript position; makes the session
// terminal. Throws StateError before a stopping condition.
template <typename T>
const Diagnosis& diagnose(const CoadModel<T>& model, DialogueSession& session);

// Answers the pending inquiry. Throws StateError when none is pending.
void answer(DialogueSession& session, SymptomStatus status);

struct EpisodeResult {
  std::vector<int> inquired;
  std::vector<SymptomEntry> transcript;
  int predicted = -1;
  std::vector<double> probabilities;
  int turns = 0;
  bool vocabulary_exhausted = false;
};

template <typename T>
EpisodeResult run_episode(const CoadModel<T>& model, const Vocab& vocab, const PatientRecord& record, TurnMode mode,
                          int t_max, const InquiryOptions& options = {});

}  // namespace coad
