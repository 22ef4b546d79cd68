#include "coad/dialogue.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "coad/error.hpp"
#include "coad/log.hpp"

namespace coad {

using tensor::Tape;

TurnMode parse_turn_mode(const std::string& name) {
  if (name == "limited") return TurnMode::limited;
  if (name == "fixed") return TurnMode::fixed;
  throw ConfigError("unknown mode '" + name + "' (expected limited or fixed)");
}

std::string to_string(TurnMode mode) { return mode == TurnMode::fixed ? "fixed" : "limited"; }

std::vector<std::pair<int, double>> Diagnosis::top(std::size_t k) const {
  std::vector<std::pair<int, double>> out;
  for (std::size_t i = 0; i < probabilities.size(); ++i) out.emplace_back(static_cast<int>(i), probabilities[i]);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (out.size() > k) out.resize(k);
  return out;
}

DialogueSession::DialogueSession(const Vocab& vocab, std::vector<SymptomEntry> explicit_symptoms, TurnMode mode,
                                 int t_max)
    : symptom_count_(vocab.symptom_count()),
      mode_(mode),
      t_max_(t_max),
      explicit_count_(explicit_symptoms.size()),
      transcript_(std::move(explicit_symptoms)),
      seen_(static_cast<std::size_t>(vocab.symptom_count()), 0) {
  if (transcript_.empty()) throw ConfigError("at least one explicit symptom is required");
  if (t_max < 0) throw ConfigError("turn budget must be non-negative");
  if (mode == TurnMode::fixed && t_max == 0) throw ConfigError("fixed mode needs a turn budget of at least 1");
  for (const auto& e : transcript_) {
    if (e.symptom < 0 || e.symptom >= symptom_count_) {
      throw ConfigError("explicit symptom id " + std::to_string(e.symptom) + " is outside the vocabulary");
    }
    if (seen_[static_cast<std::size_t>(e.symptom)]) {
      throw ConfigError("explicit symptom '" + vocab.symptom_name(e.symptom) + "' listed twice");
    }
    seen_[static_cast<std::size_t>(e.symptom)] = 1;
  }
}

std::vector<int> DialogueSession::inquired() const {
  std::vector<int> out;
  for (std::size_t i = explicit_count_; i < transcript_.size(); ++i) out.push_back(transcript_[i].symptom);
  return out;
}

bool DialogueSession::ready_to_diagnose() const {
  if (terminal() || pending_) return false;
  return stopped_ || turns_ >= t_max_;
}

bool DialogueSession::mentioned(int symptom) const {
  return symptom >= 0 && symptom < symptom_count_ && seen_[static_cast<std::size_t>(symptom)] != 0;
}

void DialogueSession::set_pending(int symptom) {
  if (terminal() || stopped_) throw StateError("session has already stopped");
  if (pending_) throw StateError("an inquiry is already pending");
  if (turns_ >= t_max_) throw StateError("turn budget exhausted");
  if (symptom < 0 || symptom >= symptom_count_) throw StateError("inquiry outside the symptom vocabulary");
  if (mentioned(symptom)) throw StateError("symptom already in the transcript");
  pending_ = symptom;
}

void DialogueSession::stop() {
  if (terminal() || stopped_) throw StateError("session has already stopped");
  if (pending_) throw StateError("an inquiry is pending");
  stopped_ = true;
}

void DialogueSession::answer(SymptomStatus status) {
  if (terminal()) throw StateError("session is terminal");
  if (!pending_) throw StateError("no pending inquiry to answer");
  transcript_.push_back({*pending_, status});
  seen_[static_cast<std::size_t>(*pending_)] = 1;
  pending_.reset();
  ++turns_;
}

void DialogueSession::finish(Diagnosis diagnosis) {
  if (!ready_to_diagnose()) throw StateError("diagnosis requested before the dialogue stopped");
  diagnosis_ = std::move(diagnosis);
}

SymptomStatus SimulatedPatient::respond(int symptom) const {
  for (const auto* list : {&record_.explicit_symptoms, &record_.implicit_symptoms}) {
    for (const auto& e : *list) {
      if (e.symptom == symptom) return e.status;
    }
  }
  return SymptomStatus::uncertain;
}

void answer(DialogueSession& session, SymptomStatus status) { session.answer(status); }

namespace {

template <typename T>
ModelOutput<T> forward_transcript(const CoadModel<T>& model, const DialogueSession& session) {
  Tape<T> tape(false);
  return model.forward(tape, ModelInput::plain(session.transcript()));
}

int argmax_lowest(const std::vector<double>& v) {
  int best = -1;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (std::isinf(v[i]) && v[i] < 0) continue;
    if (best < 0 || v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace

template <typename T>
std::vector<double> inquiry_scores(const CoadModel<T>& model, const DialogueSession& session,
                                   const InquiryOptions& options) {
  const auto out = forward_transcript(model, session);
  const auto& logits = out.symptom_logits.value();
  const auto classes = logits.cols();
  const auto last = logits.rows() - 1;
  const int end_id = model.config().end_id();
  const int pad_id = model.config().pad_id();
  constexpr double kMasked = -std::numeric_limits<double>::infinity();
  std::vector<double> scores(classes);
  for (std::size_t c = 0; c < classes; ++c) scores[c] = static_cast<double>(logits.data()[last * classes + c]);
  scores[static_cast<std::size_t>(pad_id)] = kMasked;
  if (options.mask_repeats) {
    for (int s = 0; s < end_id; ++s) {
      if (session.mentioned(s)) scores[static_cast<std::size_t>(s)] = kMasked;
    }
  }
  if (session.mode() == TurnMode::fixed && session.turns() < session.t_max()) {
    scores[static_cast<std::size_t>(end_id)] = kMasked;
  }
  return scores;
}

template <typename T>
int next_inquiry(const CoadModel<T>& model, DialogueSession& session, const InquiryOptions& options) {
  if (session.terminal() || session.stopped()) throw StateError("session has already stopped");
  if (session.pending()) throw StateError("an inquiry is already pending");
  const int end_id = model.config().end_id();
  const bool capacity = session.transcript().size() >= static_cast<std::size_t>(model.config().max_length);
  int pick = end_id;
  if (session.turns() < session.t_max() && !capacity) {
    const auto scores = inquiry_scores(model, session, options);
    pick = argmax_lowest(scores);
    if (pick < 0) {
      log::info("all inquiry candidates masked; stopping");
      pick = end_id;
    } else if (pick != end_id && session.mentioned(pick)) {
      pick = end_id;
    }
  }
  if (pick == end_id) {
    session.stop();
  } else {
    session.set_pending(pick);
  }
  return pick;
}

template <typename T>
const Diagnosis& diagnose(const CoadModel<T>& model, DialogueSession& session) {
  if (!session.ready_to_diagnose()) throw StateError("diagnosis requested before the dialogue stopped");
  const auto out = forward_transcript(model, session);
  const auto& logits = out.disease_logits.value();
  const auto classes = logits.cols();
  const auto* row = logits.data() + (logits.rows() - 1) * classes;
  Diagnosis d;
  d.probabilities.resize(classes);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < classes; ++c) top = std::max(top, static_cast<double>(row[c]));
  double sum = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    d.probabilities[c] = std::exp(static_cast<double>(row[c]) - top);
    sum += d.probabilities[c];
  }
  for (auto& p : d.probabilities) p /= sum;
  d.disease = static_cast<int>(std::max_element(row, row + classes) - row);
  session.finish(std::move(d));
  return *session.diagnosis();
}

template <typename T>
EpisodeResult run_episode(const CoadModel<T>& model, const Vocab& vocab, const PatientRecord& record, TurnMode mode,
                          int t_max, const InquiryOptions& options) {
  validate_record(record, vocab);
  SimulatedPatient patient(record);
  DialogueSession session(vocab, record.explicit_symptoms, mode, t_max);
  while (!session.ready_to_diagnose()) {
    const int pick = next_inquiry(model, session, options);
    if (pick == vocab.end_id()) break;
    session.answer(patient.respond(pick));
  }
  const auto& d = diagnose(model, session);
  EpisodeResult r;
  r.inquired = session.inquired();
  r.transcript = session.transcript();
  r.predicted = d.disease;
  r.probabilities = d.probabilities;
  r.turns = session.turns();
  r.vocabulary_exhausted = mode == TurnMode::fixed && r.turns < t_max;
  if (r.vocabulary_exhausted) log::info("fixed-mode episode stopped after " + std::to_string(r.turns) + " turns");
  return r;
}

#define COAD_DIALOGUE_INSTANTIATE(T)                                                                             \
  template std::vector<double> inquiry_scores(const CoadModel<T>&, const DialogueSession&, const InquiryOptions&); \
  template int next_inquiry(const CoadModel<T>&, DialogueSession&, const InquiryOptions&);                       \
  template const Diagnosis& diagnose(const CoadModel<T>&, DialogueSession&);                                     \
  template EpisodeResult run_episode(const CoadModel<T>&, const Vocab&, const PatientRecord&, TurnMode, int,     \
                                     const InquiryOptions&);

COAD_DIALOGUE_INSTANTIATE(float)
COAD_DIALOGUE_INSTANTIATE(double)

}  // namespace coad
