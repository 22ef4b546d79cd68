#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "coad/dialogue.hpp"
#include "coad/error.hpp"
#include "coad/training.hpp"
#include "oracles.hpp"

using namespace coad;

namespace {

ModelConfig config_for(const Vocab& vocab, int max_length = 32) {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ff = 16;
  c.dropout = 0.0;
  c.max_length = max_length;
  c.seed = 1;
  return c.with_vocab(vocab);
}

// With zero weights every position's logits equal the head biases.
CoadModel<double> biased_model(const Vocab& vocab, const std::vector<double>& symptom_bias,
                               const std::vector<double>& disease_bias = {}, int max_length = 32) {
  CoadModel<double> m(config_for(vocab, max_length), Init::zero);
  auto& sb = m.parameter("symptom_head.b").value();
  for (std::size_t i = 0; i < symptom_bias.size(); ++i) sb[i] = symptom_bias[i];
  auto& db = m.parameter("disease_head.b").value();
  for (std::size_t i = 0; i < disease_bias.size(); ++i) db[i] = disease_bias[i];
  return m;
}

// Greedy order under constant scores: repeatedly take the best unmasked
// candidate (lowest id on ties) until END wins or the budget is spent.
std::vector<int> greedy_by_hand(const std::vector<double>& bias, std::set<int> mentioned, int end_id, TurnMode mode,
                                int t_max) {
  std::vector<int> asked;
  while (static_cast<int>(asked.size()) < t_max) {
    int best = -1;
    for (int c = 0; c <= end_id; ++c) {
      if (c < end_id && mentioned.count(c)) continue;
      if (c == end_id && mode == TurnMode::fixed) continue;
      if (best < 0 || bias[static_cast<std::size_t>(c)] > bias[static_cast<std::size_t>(best)]) best = c;
    }
    if (best < 0 || best == end_id) break;
    asked.push_back(best);
    mentioned.insert(best);
  }
  return asked;
}

}  // namespace

TEST(TurnModeTest, ParseAndPrint) {
  EXPECT_EQ(parse_turn_mode("limited"), TurnMode::limited);
  EXPECT_EQ(to_string(TurnMode::fixed), "fixed");
  EXPECT_THROW(parse_turn_mode("open"), ConfigError);
}

TEST(Session, ConstructorValidation) {
  const auto vocab = oracle::numbered_vocab(4, 2);
  EXPECT_THROW(DialogueSession(vocab, {}, TurnMode::limited, 3), ConfigError);
  EXPECT_THROW(DialogueSession(vocab, {{9, SymptomStatus::present}}, TurnMode::limited, 3), ConfigError);
  EXPECT_THROW(DialogueSession(vocab, {{1, SymptomStatus::present}, {1, SymptomStatus::absent}}, TurnMode::limited, 3),
               ConfigError);
  EXPECT_THROW(DialogueSession(vocab, {{1, SymptomStatus::present}}, TurnMode::limited, -1), ConfigError);
  EXPECT_THROW(DialogueSession(vocab, {{1, SymptomStatus::present}}, TurnMode::fixed, 0), ConfigError);
}

TEST(Session, TransitionsOutOfOrderThrow) {
  const auto vocab = oracle::numbered_vocab(4, 2);
  const auto model = biased_model(vocab, {0, 5, 0, 0, 0, 0});
  DialogueSession s(vocab, {{0, SymptomStatus::present}}, TurnMode::limited, 3);
  EXPECT_THROW(answer(s, SymptomStatus::present), StateError);
  EXPECT_THROW(diagnose(model, s), StateError);
  EXPECT_EQ(next_inquiry(model, s), 1);
  EXPECT_THROW(next_inquiry(model, s), StateError);
  answer(s, SymptomStatus::absent);
  EXPECT_THROW(answer(s, SymptomStatus::absent), StateError);
  EXPECT_EQ(s.turns(), 1);
  EXPECT_EQ(s.transcript().back(), (SymptomEntry{1, SymptomStatus::absent}));
}

TEST(Inquiry, ConstantScoresFollowHandGreedyOrder) {
  const auto vocab = oracle::numbered_vocab(6, 3);
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> bias(8);
    for (auto& b : bias) b = std::round(rng.normal() * 2);  // rounding produces ties
    bias[7] = 100;                                          // PAD would win if it were not masked
    const auto model = biased_model(vocab, bias);
    const auto record = oracle::random_record(rng, 6, 3, 2, 3);
    for (auto mode : {TurnMode::limited, TurnMode::fixed}) {
      const int t_max = 3;
      const auto ep = run_episode(model, vocab, record, mode, t_max);
      std::set<int> mentioned;
      for (const auto& e : record.explicit_symptoms) mentioned.insert(e.symptom);
      EXPECT_EQ(ep.inquired, greedy_by_hand(bias, mentioned, vocab.end_id(), mode, t_max)) << "trial " << trial;
    }
  }
}

TEST(Inquiry, FixedModeNeverStopsEarly) {
  const auto vocab = oracle::numbered_vocab(6, 2);
  const auto model = biased_model(vocab, {0, 0, 0, 0, 0, 0, 50, 0});
  const PatientRecord r{{{0, SymptomStatus::present}}, {{2, SymptomStatus::present}}, 0};
  const auto limited = run_episode(model, vocab, r, TurnMode::limited, 4);
  EXPECT_EQ(limited.turns, 0);
  const auto fixed = run_episode(model, vocab, r, TurnMode::fixed, 4);
  EXPECT_EQ(fixed.turns, 4);
  EXPECT_EQ(fixed.inquired, (std::vector<int>{1, 2, 3, 4}));
  EXPECT_FALSE(fixed.vocabulary_exhausted);
}

TEST(Inquiry, SaturatedVocabularyForcesEnd) {
  const auto vocab = oracle::numbered_vocab(3, 2);
  const auto model = biased_model(vocab, {1, 1, 1, -5, 0});
  const PatientRecord r{{{0, SymptomStatus::present}}, {}, 1};
  const auto ep = run_episode(model, vocab, r, TurnMode::fixed, 5);
  EXPECT_EQ(ep.inquired, (std::vector<int>{1, 2}));
  EXPECT_TRUE(ep.vocabulary_exhausted);
}

TEST(Inquiry, CapacityForcesEnd) {
  const auto vocab = oracle::numbered_vocab(10, 2);
  const auto model = biased_model(vocab, {0, 1, 1, 1, 1, 1, 1, 1, 1, 1, -5, 0}, {}, 4);
  const PatientRecord r{{{0, SymptomStatus::present}}, {}, 0};
  const auto ep = run_episode(model, vocab, r, TurnMode::limited, 9);
  EXPECT_EQ(ep.transcript.size(), 4u);
  EXPECT_EQ(ep.turns, 3);
}

TEST(Inquiry, UnmaskedRepeatIsTreatedAsEnd) {
  const auto vocab = oracle::numbered_vocab(4, 2);
  const auto model = biased_model(vocab, {9, 1, 0, 0, 0, 0});
  const PatientRecord r{{{0, SymptomStatus::present}}, {{1, SymptomStatus::present}}, 0};
  EXPECT_EQ(run_episode(model, vocab, r, TurnMode::limited, 3).inquired, (std::vector<int>{1, 2, 3}));
  EXPECT_TRUE(run_episode(model, vocab, r, TurnMode::limited, 3, {false}).inquired.empty());
}

TEST(Patient, AnswersFromRecordOrUncertain) {
  const PatientRecord r{{{0, SymptomStatus::present}}, {{1, SymptomStatus::absent}, {2, SymptomStatus::present}}, 0};
  const SimulatedPatient p(r);
  EXPECT_EQ(p.respond(1), SymptomStatus::absent);
  EXPECT_EQ(p.respond(2), SymptomStatus::present);
  EXPECT_EQ(p.respond(3), SymptomStatus::uncertain);
  const auto vocab = oracle::numbered_vocab(4, 2);
  const auto model = biased_model(vocab, {0, 0, 0, 3, -1, 0});
  const auto ep = run_episode(model, vocab, r, TurnMode::fixed, 1);
  EXPECT_EQ(ep.transcript.back(), (SymptomEntry{3, SymptomStatus::uncertain}));
}

TEST(Diagnose, ZeroModelIsUniformAndPicksFirst) {
  const auto vocab = oracle::numbered_vocab(4, 5);
  const CoadModel<double> model(config_for(vocab), Init::zero);
  const PatientRecord r{{{2, SymptomStatus::present}}, {}, 3};
  const auto ep = run_episode(model, vocab, r, TurnMode::limited, 0);
  EXPECT_EQ(ep.turns, 0);
  EXPECT_EQ(ep.predicted, 0);
  for (double p : ep.probabilities) EXPECT_NEAR(p, 0.2, 1e-12);
}

TEST(Diagnose, BiasDeterminesDistribution) {
  const auto vocab = oracle::numbered_vocab(4, 3);
  const auto model = biased_model(vocab, {0, 0, 0, 0, 9, 0}, {0, std::log(3.0), 0});
  DialogueSession s(vocab, {{0, SymptomStatus::present}}, TurnMode::limited, 2);
  EXPECT_EQ(next_inquiry(model, s), vocab.end_id());
  EXPECT_TRUE(s.ready_to_diagnose());
  const auto& d = diagnose(model, s);
  EXPECT_EQ(d.disease, 1);
  EXPECT_NEAR(d.probabilities[1], 0.6, 1e-12);
  const auto top = d.top(2);
  ASSERT_EQ(top.size(), 2u);
  EXPECT_EQ(top[0].first, 1);
  EXPECT_EQ(top[1].first, 0);
  EXPECT_TRUE(s.terminal());
  EXPECT_THROW(next_inquiry(model, s), StateError);
}

TEST(Protocol, NoRepetitionAndBudgetOnRandomModels) {
  const auto vocab = oracle::numbered_vocab(12, 4);
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    auto cfg = config_for(vocab);
    cfg.seed = static_cast<std::uint64_t>(trial);
    const CoadModel<float> model(cfg);
    const auto r = oracle::random_record(rng, 12, 4, 3, 5);
    for (auto mode : {TurnMode::limited, TurnMode::fixed}) {
      for (int t_max : {1, 4, 10}) {
        const auto ep = run_episode(model, vocab, r, mode, t_max);
        std::set<int> seen;
        for (const auto& e : r.explicit_symptoms) seen.insert(e.symptom);
        for (int s : ep.inquired) EXPECT_TRUE(seen.insert(s).second) << "repeat " << s;
        EXPECT_LE(ep.turns, t_max);
        if (mode == TurnMode::fixed && !ep.vocabulary_exhausted) EXPECT_EQ(ep.turns, t_max);
        EXPECT_EQ(ep.transcript.size(), r.explicit_symptoms.size() + ep.inquired.size());
        EXPECT_GE(ep.predicted, 0);
      }
    }
  }
}

TEST(Inquiry, ScoresComeFromPlainForward) {
  const auto vocab = oracle::numbered_vocab(8, 3);
  auto cfg = config_for(vocab);
  cfg.seed = 4;
  const CoadModel<double> model(cfg);
  DialogueSession s(vocab, {{2, SymptomStatus::present}, {5, SymptomStatus::absent}}, TurnMode::fixed, 3);
  next_inquiry(model, s);
  answer(s, SymptomStatus::present);
  const auto scores = inquiry_scores(model, s);
  tensor::Tape<double> tape(false);
  const auto out = model.forward(tape, ModelInput::plain(s.transcript()));
  const auto& logits = out.symptom_logits.value();
  const auto last = logits.rows() - 1;
  for (int c = 0; c < vocab.symptom_token_count(); ++c) {
    const bool masked = c == vocab.pad_id() || c == vocab.end_id() || s.mentioned(c);
    if (masked) {
      EXPECT_TRUE(std::isinf(scores[static_cast<std::size_t>(c)]));
    } else {
      EXPECT_DOUBLE_EQ(scores[static_cast<std::size_t>(c)], logits.at(last, static_cast<std::size_t>(c)));
    }
  }
}

TEST(Inquiry, LearnsCharacteristicFollowUp) {
  const auto base = load_corpus(std::filesystem::path(COAD_TEST_DATA) / "allergy_rash.jsonl");
  Corpus corpus{base.vocab, {}, {}};
  for (int i = 0; i < 16; ++i) corpus.train.insert(corpus.train.end(), base.train.begin(), base.train.end());
  auto cfg = config_for(corpus.vocab);
  cfg.hidden = 16;
  cfg.ff = 32;
  TrainConfig tc;
  tc.steps = 150;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  const auto trained = train<double>(corpus, cfg, tc);
  const auto& v = corpus.vocab;
  const PatientRecord query{{{v.symptom_id("Headache"), SymptomStatus::present}},
                            {{v.symptom_id("Runny nose"), SymptomStatus::present}},
                            v.disease_id("Common cold")};
  const auto ep = run_episode(trained.model, v, query, TurnMode::limited, 5);
  ASSERT_FALSE(ep.inquired.empty());
  EXPECT_EQ(ep.inquired.front(), v.symptom_id("Runny nose"));
  EXPECT_EQ(ep.predicted, v.disease_id("Common cold"));
}
