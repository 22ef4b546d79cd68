#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "coad/corpus.hpp"
#include "coad/error.hpp"
#include "oracles.hpp"

using namespace coad;

namespace {

Corpus parse(const std::string& text) {
  std::istringstream in(text);
  return read_corpus(in);
}

}  // namespace

TEST(Vocab, SpecialIdsFollowSymptoms) {
  Vocab v({"a", "b", "c"}, {"x"});
  EXPECT_EQ(v.end_id(), 3);
  EXPECT_EQ(v.pad_id(), 4);
  EXPECT_EQ(v.symptom_token_count(), 5);
  EXPECT_EQ(v.token_name(v.end_id()), "<end>");
  EXPECT_EQ(v.symptom_id("b"), 1);
  EXPECT_EQ(v.symptom_id("zzz"), -1);
}

TEST(Vocab, LookupIsABijection) {
  Vocab v({"a", "b", "c", "d"}, {"x", "y"});
  for (int i = 0; i < v.symptom_count(); ++i) EXPECT_EQ(v.symptom_id(v.symptom_name(i)), i);
  for (int i = 0; i < v.disease_count(); ++i) EXPECT_EQ(v.disease_id(v.disease_name(i)), i);
}

TEST(Vocab, RejectsDuplicatesAndSpecialNames) {
  EXPECT_THROW(Vocab({"a", "a"}, {"x"}), DataError);
  EXPECT_THROW(Vocab({"a"}, {"x", "x"}), DataError);
  EXPECT_THROW(Vocab({"<end>"}, {"x"}), DataError);
  EXPECT_THROW(Vocab({"#"}, {"x"}), DataError);
}

TEST(Status, OnlyThreeCodes) {
  EXPECT_EQ(status_from_int(0), SymptomStatus::uncertain);
  EXPECT_EQ(status_from_int(1), SymptomStatus::present);
  EXPECT_EQ(status_from_int(2), SymptomStatus::absent);
  EXPECT_THROW(status_from_int(3), DataError);
  EXPECT_THROW(status_from_int(-1), DataError);
}

TEST(LoadCorpus, MinimalRecord) {
  const auto c = parse(R"({"explicit":[["headache",1]],"implicit":[["runny nose",1]],"disease":"allergic rhinitis"})");
  ASSERT_EQ(c.train.size(), 1u);
  EXPECT_EQ(c.train[0].n(), 1);
  EXPECT_EQ(c.train[0].m(), 1);
  EXPECT_EQ(c.vocab.disease_name(c.train[0].disease), "allergic rhinitis");
  EXPECT_EQ(c.vocab.symptom_count(), 2);
}

TEST(LoadCorpus, WorkedExampleFixture) {
  const auto c = load_corpus(std::filesystem::path(COAD_TEST_DATA) / "allergy_rash.jsonl");
  ASSERT_EQ(c.train.size(), 2u);
  ASSERT_EQ(c.test.size(), 1u);
  const auto& r = c.train[0];
  EXPECT_EQ(r.m(), 3);
  EXPECT_EQ(c.vocab.symptom_name(r.explicit_symptoms.back().symptom), "Sneezing");
  EXPECT_EQ(c.vocab.disease_name(r.disease), "Allergy Rash");
  EXPECT_EQ(c.test[0].implicit_symptoms[1].status, SymptomStatus::absent);
}

TEST(LoadCorpus, DuplicateSymptomInRecordIsRejected) {
  EXPECT_THROW(parse(R"({"explicit":[["headache",1]],"implicit":[["headache",1]],"disease":"d"})"), DataError);
}

TEST(LoadCorpus, MalformedInputIsRejected) {
  EXPECT_THROW(parse("{not json"), DataError);
  EXPECT_THROW(parse(R"({"explicit":[],"implicit":[],"disease":"d"})"), DataError);
  EXPECT_THROW(parse(R"({"explicit":[["a",7]],"implicit":[],"disease":"d"})"), DataError);
  EXPECT_THROW(parse(R"({"symptoms":["a"],"diseases":["d"]}
{"explicit":[["b",1]],"implicit":[],"disease":"d"})"),
               DataError);
  EXPECT_THROW(load_corpus("/nonexistent/corpus.jsonl"), DataError);
}

TEST(LoadCorpus, ExplicitAbsentStatusIsAccepted) {
  const auto c = parse(R"({"explicit":[["a",2],["b",1]],"implicit":[],"disease":"d"})");
  EXPECT_EQ(c.train[0].explicit_symptoms[0].status, SymptomStatus::absent);
}

TEST(LoadCorpus, RoundTripOfRandomCorpora) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Corpus c;
    c.vocab = oracle::numbered_vocab(12, 4);
    const int n = static_cast<int>(rng.range(1, 20));
    for (int i = 0; i < n; ++i) {
      auto r = oracle::random_record(rng, 12, 4, 4, 6);
      (rng.bernoulli(0.3) ? c.test : c.train).push_back(r);
    }
    std::stringstream buffer;
    write_corpus(c, buffer);
    EXPECT_EQ(read_corpus(buffer), c) << "trial " << trial;
  }
}

TEST(Synthetic, SizesAndRanges) {
  SyntheticConfig cfg;
  const auto c = generate_synthetic(cfg);
  EXPECT_EQ(c.train.size(), 500u);
  EXPECT_EQ(c.test.size(), 100u);
  EXPECT_EQ(c.vocab.symptom_count(), 30);
  EXPECT_EQ(c.vocab.disease_count(), 8);
  for (const auto* split : {&c.train, &c.test}) {
    for (const auto& r : *split) {
      EXPECT_NO_THROW(validate_record(r, c.vocab));
      EXPECT_GE(r.n(), cfg.explicit_min);
      EXPECT_LE(r.n(), cfg.explicit_max);
      EXPECT_GE(r.m(), cfg.implicit_min);
      EXPECT_LE(r.m(), cfg.implicit_max);
      auto e = oracle::id_set(r.explicit_symptoms);
      for (const auto& s : r.implicit_symptoms) EXPECT_FALSE(e.contains(s.symptom));
    }
  }
}

TEST(Synthetic, DeterministicForASeed) {
  SyntheticConfig cfg;
  cfg.seed = 7;
  std::stringstream a, b;
  write_corpus(generate_synthetic(cfg), a);
  write_corpus(generate_synthetic(cfg), b);
  EXPECT_EQ(a.str(), b.str());
  cfg.seed = 8;
  std::stringstream c;
  write_corpus(generate_synthetic(cfg), c);
  EXPECT_NE(a.str(), c.str());
}

TEST(Synthetic, PositiveOnlyWithoutNegatives) {
  SyntheticConfig cfg;
  cfg.negative_prob = 0.0;
  for (const auto& r : generate_synthetic(cfg).train) {
    for (const auto& e : r.plain_sequence()) EXPECT_EQ(e.status, SymptomStatus::present);
  }
}

TEST(Synthetic, NegativesAppearWhenConfigured) {
  SyntheticConfig cfg;
  cfg.negative_prob = 0.5;
  int absent = 0;
  for (const auto& r : generate_synthetic(cfg).train) {
    for (const auto& e : r.plain_sequence()) absent += e.status == SymptomStatus::absent;
    for (const auto& e : r.plain_sequence()) EXPECT_NE(e.status, SymptomStatus::uncertain);
  }
  EXPECT_GT(absent, 0);
}

TEST(Synthetic, DiseaseRecoverableBetterThanChance) {
  SyntheticConfig cfg;
  const auto c = generate_synthetic(cfg);
  const auto profiles = synthetic_profiles(cfg);
  int hits = 0;
  for (const auto& r : c.test) {
    int best = 0, best_overlap = -1;
    for (std::size_t d = 0; d < profiles.size(); ++d) {
      int overlap = 0;
      for (const auto& e : r.plain_sequence()) {
        if (e.status == SymptomStatus::present &&
            std::find(profiles[d].begin(), profiles[d].end(), e.symptom) != profiles[d].end()) {
          ++overlap;
        }
      }
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best = static_cast<int>(d);
      }
    }
    hits += best == r.disease;
  }
  EXPECT_GT(hits, static_cast<int>(c.test.size()) / cfg.n_diseases * 3);
}

TEST(Synthetic, InfeasibleConfigIsRejected) {
  SyntheticConfig cfg;
  cfg.characteristic_count = 31;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = {};
  cfg.implicit_min = 0;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
  cfg = {};
  cfg.presence_prob = 1.5;
  EXPECT_THROW(generate_synthetic(cfg), ConfigError);
}

TEST(Stats, TableFields) {
  const auto text = format_stats(corpus_stats(generate_synthetic(SyntheticConfig{})));
  for (const char* field : {"# Disease", "# Symptom", "Symptom type", "Average length", "# Training", "# Test"}) {
    EXPECT_NE(text.find(field), std::string::npos) << field;
  }
}

TEST(PrefixIndex, SelfMembershipAndPrefixes) {
  const auto c = load_corpus(std::filesystem::path(COAD_TEST_DATA) / "allergy_rash.jsonl");
  const auto index = build_prefix_index(c.train);
  const auto full = symptom_set(c.train[0]);
  EXPECT_TRUE(index.contains(full));
  std::vector<int> prefix{full.begin(), full.begin() + 3};
  EXPECT_FALSE(index.contains(prefix));
}

TEST(PrefixIndex, MatchesLinearScan) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PatientRecord> train;
    for (int i = 0; i < 3; ++i) train.push_back(oracle::random_record(rng, 5, 2, 2, 2));
    // engineered collision: a copy of record 0 with the lists reshuffled
    auto copy = train[0];
    std::swap(copy.explicit_symptoms, copy.implicit_symptoms);
    if (copy.explicit_symptoms.empty()) std::swap(copy.explicit_symptoms, copy.implicit_symptoms);
    train.push_back(copy);
    const auto index = build_prefix_index(train);
    for (int q = 0; q < 10; ++q) {
      std::set<int> query;
      const int size = static_cast<int>(rng.range(1, 4));
      while (static_cast<int>(query.size()) < size) query.insert(static_cast<int>(rng.below(5)));
      int count = 0;
      for (const auto& r : train) count += oracle::id_set(r.plain_sequence()) == query;
      std::vector<int> ids(query.begin(), query.end());
      EXPECT_EQ(index.count(ids), count);
    }
    EXPECT_GE(index.count(symptom_set(train[0])), 2);
  }
}
