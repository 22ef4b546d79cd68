#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace coad {

// 1 = confirmed present, 2 = confirmed absent, 0 = uncertain/unknown.
enum class SymptomStatus : std::uint8_t { uncertain = 0, present = 1, absent = 2 };

inline constexpr int kStatusCount = 3;

SymptomStatus status_from_int(int code);
inline int to_int(SymptomStatus s) { return static_cast<int>(s); }

// Target sentinel for positions that do not contribute to the loss.
inline constexpr int kIgnore = -1;

class Vocab {
 public:
  static constexpr const char* kEndName = "<end>";
  static constexpr const char* kPadName = "<pad>";
  static constexpr const char* kIgnoreName = "#";

  Vocab() = default;
  Vocab(std::vector<std::string> symptoms, std::vector<std::string> diseases);

  const std::vector<std::string>& symptoms() const { return symptoms_; }
  const std::vector<std::string>& diseases() const { return diseases_; }

  int symptom_count() const { return static_cast<int>(symptoms_.size()); }
  int disease_count() const { return static_cast<int>(diseases_.size()); }

  // Special symptom-side tokens follow the real symptoms.
  int end_id() const { return symptom_count(); }
  int pad_id() const { return symptom_count() + 1; }
  int symptom_token_count() const { return symptom_count() + 2; }

  // Returns -1 when the name is unknown.
  int symptom_id(const std::string& name) const;
  int disease_id(const std::string& name) const;

  const std::string& symptom_name(int id) const;
  const std::string& disease_name(int id) const;

  // Symptom name, or one of the special token names.
  std::string token_name(int id) const;

  bool operator==(const Vocab& other) const {
    return symptoms_ == other.symptoms_ && diseases_ == other.diseases_;
  }

 private:
  std::vector<std::string> symptoms_;
  std::vector<std::string> diseases_;
  std::unordered_map<std::string, int> symptom_index_;
  std::unordered_map<std::string, int> disease_index_;
};

struct SymptomEntry {
  int symptom = 0;
  SymptomStatus status = SymptomStatus::present;

  bool operator==(const SymptomEntry&) const = default;
};

struct PatientRecord {
  std::vector<SymptomEntry> explicit_symptoms;  // N >= 1
  std::vector<SymptomEntry> implicit_symptoms;  // M >= 0
  int disease = 0;

  int n() const { return static_cast<int>(explicit_symptoms.size()); }
  int m() const { return static_cast<int>(implicit_symptoms.size()); }

  // explicit followed by implicit
  std::vector<SymptomEntry> plain_sequence() const;

  bool operator==(const PatientRecord&) const = default;
};

// Throws DataError describing the first violated invariant.
void validate_record(const PatientRecord& record, const Vocab& vocab);

struct Corpus {
  Vocab vocab;
  std::vector<PatientRecord> train;
  std::vector<PatientRecord> test;

  bool operator==(const Corpus&) const = default;
};

// Line-delimited JSON. Optional header {"symptoms":[...],"diseases":[...]},
// then one record per line:
//   {"explicit":[[name,status],...],"implicit":[[name,status],...],
//    "disease":name,"split":"train"|"test"}
// "split" defaults to "train". Without a header the vocabulary is inferred
// in order of first appearance.
Corpus load_corpus(const std::filesystem::path& path);
Corpus read_corpus(std::istream& in);
void write_corpus(const Corpus& corpus, std::ostream& out);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

struct SyntheticConfig {
  int n_diseases = 8;
  int n_symptoms = 30;
  int characteristic_count = 6;  // profile size per disease
  double presence_prob = 0.6;    // each profile symptom present with this probability
  double negative_prob = 0.0;    // per implicit positive, chance of an added denied confounder
  double noise_prob = 0.1;       // chance of one off-profile present symptom
  int explicit_min = 1;
  int explicit_max = 2;
  int implicit_min = 1;
  int implicit_max = 6;
  int train_size = 500;
  int test_size = 100;
  std::uint64_t seed = 7;

  // Throws ConfigError.
  void validate() const;
};

Corpus generate_synthetic(const SyntheticConfig& config);

// The characteristic symptom ids of each disease, as used by the generator.
std::vector<std::vector<int>> synthetic_profiles(const SyntheticConfig& config);

struct CorpusStats {
  int diseases = 0;
  int symptoms = 0;
  std::string symptom_type;  // "True" or "True/False"
  double average_length = 0.0;
  int training = 0;
  int test = 0;
};

CorpusStats corpus_stats(const Corpus& corpus);
std::string format_stats(const CorpusStats& stats);

// Answers whether a symptom set equals the complete symptom set
// (explicit ∪ implicit, statuses ignored) of some training record.
class PrefixIndex {
 public:
  PrefixIndex() = default;
  explicit PrefixIndex(std::span<const PatientRecord> train);

  // Number of training records whose complete symptom set equals `symptoms`
  // (order and duplicates in the query are irrelevant).
  int count(std::span<const int> symptoms) const;
  bool contains(std::span<const int> symptoms) const { return count(symptoms) > 0; }

  std::size_t size() const { return records_; }

 private:
  std::map<std::vector<int>, int> complete_sets_;
  std::size_t records_ = 0;
};

PrefixIndex build_prefix_index(std::span<const PatientRecord> train);

// Sorted, de-duplicated symptom ids.
std::vector<int> symptom_set(std::span<const int> symptoms);
std::vector<int> symptom_set(const PatientRecord& record);

}  // namespace coad
