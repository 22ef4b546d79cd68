#include "coad/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "coad/error.hpp"
#include "coad/rng.hpp"

namespace coad {

using nlohmann::json;

SymptomStatus status_from_int(int code) {
  if (code < 0 || code >= kStatusCount) {
    throw DataError("symptom status must be 0, 1 or 2, got " + std::to_string(code));
  }
  return static_cast<SymptomStatus>(code);
}

Vocab::Vocab(std::vector<std::string> symptoms, std::vector<std::string> diseases)
    : symptoms_(std::move(symptoms)), diseases_(std::move(diseases)) {
  for (int i = 0; i < symptom_count(); ++i) {
    const auto& name = symptoms_[i];
    if (name == kEndName || name == kPadName || name == kIgnoreName) {
      throw DataError("symptom name collides with special token: " + name);
    }
    if (!symptom_index_.emplace(name, i).second) {
      throw DataError("duplicate symptom name: " + name);
    }
  }
  for (int i = 0; i < disease_count(); ++i) {
    if (!disease_index_.emplace(diseases_[i], i).second) {
      throw DataError("duplicate disease name: " + diseases_[i]);
    }
  }
}

int Vocab::symptom_id(const std::string& name) const {
  auto it = symptom_index_.find(name);
  return it == symptom_index_.end() ? -1 : it->second;
}

int Vocab::disease_id(const std::string& name) const {
  auto it = disease_index_.find(name);
  return it == disease_index_.end() ? -1 : it->second;
}

const std::string& Vocab::symptom_name(int id) const { return symptoms_.at(static_cast<std::size_t>(id)); }

const std::string& Vocab::disease_name(int id) const { return diseases_.at(static_cast<std::size_t>(id)); }

std::string Vocab::token_name(int id) const {
  if (id == kIgnore) return kIgnoreName;
  if (id == end_id()) return kEndName;
  if (id == pad_id()) return kPadName;
  return symptom_name(id);
}

std::vector<SymptomEntry> PatientRecord::plain_sequence() const {
  std::vector<SymptomEntry> out = explicit_symptoms;
  out.insert(out.end(), implicit_symptoms.begin(), implicit_symptoms.end());
  return out;
}

void validate_record(const PatientRecord& record, const Vocab& vocab) {
  if (record.explicit_symptoms.empty()) {
    throw DataError("record has an empty explicit symptom list");
  }
  if (record.disease < 0 || record.disease >= vocab.disease_count()) {
    throw DataError("disease id out of range: " + std::to_string(record.disease));
  }
  std::set<int> seen;
  for (const auto& e : record.plain_sequence()) {
    if (e.symptom < 0 || e.symptom >= vocab.symptom_count()) {
      throw DataError("symptom id out of range: " + std::to_string(e.symptom));
    }
    if (to_int(e.status) < 0 || to_int(e.status) >= kStatusCount) {
      throw DataError("invalid symptom status");
    }
    if (!seen.insert(e.symptom).second) {
      throw DataError("symptom appears twice in one record: " + vocab.symptom_name(e.symptom));
    }
  }
}

namespace {

struct RawRecord {
  std::vector<std::pair<std::string, int>> explicit_symptoms;
  std::vector<std::pair<std::string, int>> implicit_symptoms;
  std::string disease;
  bool is_test = false;
};

std::vector<std::pair<std::string, int>> parse_entries(const json& j, const char* key, int line) {
  std::vector<std::pair<std::string, int>> out;
  if (!j.contains(key)) {
    if (std::string(key) == "implicit") return out;
    throw DataError("line " + std::to_string(line) + ": missing '" + key + "'");
  }
  const auto& arr = j.at(key);
  if (!arr.is_array()) throw DataError("line " + std::to_string(line) + ": '" + key + "' must be an array");
  for (const auto& item : arr) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_string() || !item[1].is_number_integer()) {
      throw DataError("line " + std::to_string(line) + ": entries must be [name, status]");
    }
    out.emplace_back(item[0].get<std::string>(), item[1].get<int>());
  }
  return out;
}

}  // namespace

Corpus read_corpus(std::istream& in) {
  std::string text;
  int line_no = 0;
  bool have_header = false;
  std::vector<std::string> symptoms;
  std::vector<std::string> diseases;
  std::vector<RawRecord> raw;

  while (std::getline(in, text)) {
    ++line_no;
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object()) throw DataError("line " + std::to_string(line_no) + ": expected an object");
    if (j.contains("symptoms")) {
      if (have_header || !raw.empty()) {
        throw DataError("line " + std::to_string(line_no) + ": header must be the first line");
      }
      try {
        symptoms = j.at("symptoms").get<std::vector<std::string>>();
        diseases = j.at("diseases").get<std::vector<std::string>>();
      } catch (const json::exception& e) {
        throw DataError("line " + std::to_string(line_no) + ": bad header: " + e.what());
      }
      have_header = true;
      continue;
    }
    RawRecord r;
    r.explicit_symptoms = parse_entries(j, "explicit", line_no);
    r.implicit_symptoms = parse_entries(j, "implicit", line_no);
    if (!j.contains("disease") || !j["disease"].is_string()) {
      throw DataError("line " + std::to_string(line_no) + ": missing disease name");
    }
    r.disease = j["disease"].get<std::string>();
    if (j.contains("split")) {
      const auto split = j["split"].get<std::string>();
      if (split != "train" && split != "test") {
        throw DataError("line " + std::to_string(line_no) + ": split must be train or test");
      }
      r.is_test = split == "test";
    }
    raw.push_back(std::move(r));
  }

  if (!have_header) {
    std::set<std::string> seen_s;
    std::set<std::string> seen_d;
    for (const auto& r : raw) {
      for (const auto* list : {&r.explicit_symptoms, &r.implicit_symptoms}) {
        for (const auto& [name, status] : *list) {
          if (seen_s.insert(name).second) symptoms.push_back(name);
        }
      }
      if (seen_d.insert(r.disease).second) diseases.push_back(r.disease);
    }
  }

  Corpus corpus;
  corpus.vocab = Vocab(std::move(symptoms), std::move(diseases));
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto& r = raw[i];
    PatientRecord rec;
    auto convert = [&](const std::vector<std::pair<std::string, int>>& in_list, std::vector<SymptomEntry>& out) {
      for (const auto& [name, status] : in_list) {
        const int id = corpus.vocab.symptom_id(name);
        if (id < 0) throw DataError("record " + std::to_string(i + 1) + ": unknown symptom '" + name + "'");
        out.push_back({id, status_from_int(status)});
      }
    };
    convert(r.explicit_symptoms, rec.explicit_symptoms);
    convert(r.implicit_symptoms, rec.implicit_symptoms);
    rec.disease = corpus.vocab.disease_id(r.disease);
    if (rec.disease < 0) throw DataError("record " + std::to_string(i + 1) + ": unknown disease '" + r.disease + "'");
    try {
      validate_record(rec, corpus.vocab);
    } catch (const DataError& e) {
      throw DataError("record " + std::to_string(i + 1) + ": " + e.what());
    }
    (r.is_test ? corpus.test : corpus.train).push_back(std::move(rec));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path.string());
  return read_corpus(in);
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  json header = {{"symptoms", corpus.vocab.symptoms()}, {"diseases", corpus.vocab.diseases()}};
  out << header.dump() << '\n';
  auto entries = [&](const std::vector<SymptomEntry>& list) {
    json arr = json::array();
    for (const auto& e : list) arr.push_back({corpus.vocab.symptom_name(e.symptom), to_int(e.status)});
    return arr;
  };
  for (const auto* split : {&corpus.train, &corpus.test}) {
    const char* name = split == &corpus.train ? "train" : "test";
    for (const auto& r : *split) {
      json j;
      j["explicit"] = entries(r.explicit_symptoms);
      j["implicit"] = entries(r.implicit_symptoms);
      j["disease"] = corpus.vocab.disease_name(r.disease);
      j["split"] = name;
      out << j.dump() << '\n';
    }
  }
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write corpus file: " + path.string());
  write_corpus(corpus, out);
}

void SyntheticConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("synthetic config: " + msg); };
  if (n_diseases < 1 || n_symptoms < 1) fail("n_diseases and n_symptoms must be positive");
  if (characteristic_count < 1 || characteristic_count > n_symptoms) {
    fail("characteristic_count must be in [1, n_symptoms]");
  }
  if (explicit_min < 1 || explicit_max < explicit_min) fail("need 1 <= explicit_min <= explicit_max");
  if (implicit_min < 1 || implicit_max < implicit_min) fail("need 1 <= implicit_min <= implicit_max");
  if (explicit_min + implicit_min > characteristic_count) {
    fail("characteristic_count too small for explicit_min + implicit_min");
  }
  for (double p : {presence_prob, negative_prob, noise_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("probabilities must lie in [0, 1]");
  }
  if (train_size < 0 || test_size < 0) fail("split sizes must be non-negative");
}

std::vector<std::vector<int>> synthetic_profiles(const SyntheticConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::vector<int> all(static_cast<std::size_t>(config.n_symptoms));
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::vector<int>> profiles;
  for (int d = 0; d < config.n_diseases; ++d) {
    rng.shuffle(std::span<int>(all));
    profiles.emplace_back(all.begin(), all.begin() + config.characteristic_count);
  }
  return profiles;
}

namespace {

PatientRecord generate_record(const SyntheticConfig& cfg, const std::vector<std::vector<int>>& profiles, Rng& rng) {
  PatientRecord rec;
  rec.disease = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_diseases)));
  const auto& profile = profiles[static_cast<std::size_t>(rec.disease)];

  std::vector<int> positives;
  std::vector<int> absent_from_draw;
  for (int s : profile) {
    (rng.bernoulli(cfg.presence_prob) ? positives : absent_from_draw).push_back(s);
  }
  const auto need = static_cast<std::size_t>(cfg.explicit_min + cfg.implicit_min);
  while (positives.size() < need) {
    const auto k = rng.below(absent_from_draw.size());
    positives.push_back(absent_from_draw[k]);
    absent_from_draw.erase(absent_from_draw.begin() + static_cast<std::ptrdiff_t>(k));
  }
  const std::set<int> profile_set(profile.begin(), profile.end());
  if (cfg.n_symptoms > cfg.characteristic_count && rng.bernoulli(cfg.noise_prob)) {
    int s;
    do {
      s = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.n_symptoms)));
    } while (profile_set.contains(s));
    positives.push_back(s);
  }
  rng.shuffle(std::span<int>(positives));

  const int max_n = std::min<int>(cfg.explicit_max, static_cast<int>(positives.size()) - cfg.implicit_min);
  const int n = rng.range(cfg.explicit_min, max_n);
  std::set<int> used;
  for (int i = 0; i < n; ++i) {
    rec.explicit_symptoms.push_back({positives[static_cast<std::size_t>(i)], SymptomStatus::present});
    used.insert(positives[static_cast<std::size_t>(i)]);
  }
  std::vector<SymptomEntry> implicit;
  for (std::size_t i = static_cast<std::size_t>(n); i < positives.size(); ++i) {
    implicit.push_back({positives[i], SymptomStatus::present});
    used.insert(positives[i]);
  }

  if (cfg.negative_prob > 0.0) {
    std::vector<int> confounders;
    for (std::size_t d = 0; d < profiles.size(); ++d) {
      if (static_cast<int>(d) == rec.disease) continue;
      for (int s : profiles[d]) {
        if (!used.contains(s) && !profile_set.contains(s)) confounders.push_back(s);
      }
    }
    std::sort(confounders.begin(), confounders.end());
    confounders.erase(std::unique(confounders.begin(), confounders.end()), confounders.end());
    const std::size_t positive_implicit = implicit.size();
    for (std::size_t i = 0; i < positive_implicit && !confounders.empty(); ++i) {
      if (!rng.bernoulli(cfg.negative_prob)) continue;
      const auto k = rng.below(confounders.size());
      implicit.push_back({confounders[k], SymptomStatus::absent});
      confounders.erase(confounders.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }

  rng.shuffle(std::span<SymptomEntry>(implicit));
  if (implicit.size() > static_cast<std::size_t>(cfg.implicit_max)) {
    implicit.resize(static_cast<std::size_t>(cfg.implicit_max));
  }
  rec.implicit_symptoms = std::move(implicit);
  return rec;
}

std::string padded(const char* prefix, int i, int width) {
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

Corpus generate_synthetic(const SyntheticConfig& config) {
  const auto profiles = synthetic_profiles(config);
  // Separate stream so changing split sizes does not reshuffle profiles.
  Rng rng(config.seed * 0x9E3779B97F4A7C15ULL + 1);

  std::vector<std::string> symptoms;
  std::vector<std::string> diseases;
  const int sw = config.n_symptoms >= 100 ? 3 : 2;
  for (int i = 0; i < config.n_symptoms; ++i) symptoms.push_back(padded("symptom_", i, sw));
  for (int i = 0; i < config.n_diseases; ++i) diseases.push_back(padded("disease_", i, 2));

  Corpus corpus;
  corpus.vocab = Vocab(std::move(symptoms), std::move(diseases));
  for (int i = 0; i < config.train_size; ++i) corpus.train.push_back(generate_record(config, profiles, rng));
  for (int i = 0; i < config.test_size; ++i) corpus.test.push_back(generate_record(config, profiles, rng));
  return corpus;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.diseases = corpus.vocab.disease_count();
  s.symptoms = corpus.vocab.symptom_count();
  s.training = static_cast<int>(corpus.train.size());
  s.test = static_cast<int>(corpus.test.size());
  bool has_negative = false;
  double total = 0.0;
  for (const auto* split : {&corpus.train, &corpus.test}) {
    for (const auto& r : *split) {
      total += r.n() + r.m();
      for (const auto& e : r.plain_sequence()) has_negative |= e.status == SymptomStatus::absent;
    }
  }
  const int count = s.training + s.test;
  s.average_length = count > 0 ? total / count : 0.0;
  s.symptom_type = has_negative ? "True/False" : "True";
  return s;
}

std::string format_stats(const CorpusStats& s) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "# Disease" << s.diseases << '\n'
     << std::setw(16) << "# Symptom" << s.symptoms << '\n'
     << std::setw(16) << "Symptom type" << s.symptom_type << '\n'
     << std::setw(16) << "Average length" << std::fixed << std::setprecision(1) << s.average_length << '\n'
     << std::setw(16) << "# Training" << s.training << '\n'
     << std::setw(16) << "# Test" << s.test << '\n';
  return os.str();
}

std::vector<int> symptom_set(std::span<const int> symptoms) {
  std::vector<int> out(symptoms.begin(), symptoms.end());
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<int> symptom_set(const PatientRecord& record) {
  std::vector<int> ids;
  for (const auto& e : record.plain_sequence()) ids.push_back(e.symptom);
  return symptom_set(ids);
}

PrefixIndex::PrefixIndex(std::span<const PatientRecord> train) : records_(train.size()) {
  for (const auto& r : train) ++complete_sets_[symptom_set(r)];
}

int PrefixIndex::count(std::span<const int> symptoms) const {
  auto it = complete_sets_.find(symptom_set(symptoms));
  return it == complete_sets_.end() ? 0 : it->second;
}

PrefixIndex build_prefix_index(std::span<const PatientRecord> train) { return PrefixIndex(train); }

}  // namespace coad
