// Acceptance run: one PASS/FAIL line per primary criterion, exit code 1 when
// any line fails. The headline experiment writes acceptance_report.json to the
// working directory.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <string>

#include "coad/evaluation.hpp"
#include "coad/log.hpp"
#include "grad_cases.hpp"
#include "model_checks.hpp"
#include "oracles.hpp"

using namespace coad;

namespace {

using Clock = std::chrono::steady_clock;

int failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
  std::printf("%s  %-26s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  failures += ok ? 0 : 1;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

void structural_oracle() {
  const auto start = Clock::now();
  Rng rng(101);
  const auto vocab = oracle::numbered_vocab(9, 4);
  int mismatches = 0, records = 0;
  for (int corpus = 0; corpus < 50; ++corpus) {
    std::vector<PatientRecord> train;
    for (int i = 0; i < 20; ++i) train.push_back(oracle::random_record(rng, 9, 4, 5, 6));
    const auto index = build_prefix_index(train);
    for (std::size_t i = 0; i < train.size(); ++i, ++records) {
      const auto sample = expand_record(train[i], index, vocab);
      mismatches += oracle::matches(sample, oracle::expand_by_definition(train, i, vocab.end_id())) ? 0 : 1;
    }
  }
  int mask_errors = 0;
  for (int n = 1; n <= 4; ++n) {
    for (int m = 0; m <= 6; ++m) {
      const auto mask = build_attention_mask(n, m);
      const auto expected = oracle::mask_by_rule(n, m);
      const auto prefix = static_cast<std::size_t>(n - 1);
      std::vector<std::size_t> chain;
      std::vector<int> group(mask.size(), -1);
      for (std::size_t i = 0; i < prefix; ++i) chain.push_back(i);
      std::size_t pos = prefix;
      for (int g = 0; g <= m; ++g) {
        for (int i = 0; i < (g < m ? m - g : 1); ++i) group[pos++] = g;
        chain.push_back(pos - 1);
      }
      for (std::size_t q = 0; q < mask.size(); ++q) {
        for (std::size_t k = 0; k < mask.size(); ++k) {
          mask_errors += mask(q, k) != expected[q][k];
          if (group[q] >= 0 && group[k] > group[q]) mask_errors += mask(q, k);
          const bool k_is_anchor = std::find(chain.begin(), chain.end(), k) != chain.end();
          if (!k_is_anchor && q != k) mask_errors += mask(q, k);
        }
      }
      for (std::size_t i = 0; i < chain.size(); ++i) {
        for (std::size_t j = 0; j < chain.size(); ++j) mask_errors += mask(chain[i], chain[j]) != (j <= i);
      }
    }
  }
  const double t = seconds_since(start);
  report(records == 1000 && mismatches == 0 && mask_errors == 0 && t < 30, "structural-oracle",
         fmt("%d records, %d mismatches, %d mask violations, %.2fs (limit 30s)", records, mismatches, mask_errors, t));
}

ModelConfig desk_model() {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 64;
  c.heads = 2;
  c.ff = 256;
  c.dropout = 0.0;
  c.max_length = 64;
  return c;
}

void anchor_equivalence() {
  const auto start = Clock::now();
  Rng rng(202);
  const auto vocab = oracle::numbered_vocab(30, 8);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    auto cfg = desk_model().with_vocab(vocab);
    cfg.seed = static_cast<std::uint64_t>(1000 + i);
    const CoadModel<double> model(cfg);
    worst = std::max(worst, oracle::anchor_equivalence_error(model, oracle::random_record(rng, 30, 8, 5, 6), vocab));
  }
  const double t = seconds_since(start);
  report(worst < 1e-5 && t < 60, "anchor-equivalence",
         fmt("100 pairs, max |diff| %.2e (limit 1e-5), %.2fs (limit 60s)", worst, t));
}

void gradient_checks() {
  const auto start = Clock::now();
  double worst = 0;
  std::string worst_name;
  int cases = 0;
  for (auto& c : oracle::gradient_cases()) {
    const double e = oracle::gradient_error(c.fn, c.inputs);
    if (e >= worst) {
      worst = e;
      worst_name = c.name;
    }
    ++cases;
  }
  const double t = seconds_since(start);
  report(worst < 1e-3 && t < 120, "gradient-checks",
         fmt("%d cases, max rel err %.2e (%s, limit 1e-3), %.2fs (limit 120s)", cases, worst, worst_name.c_str(), t));
}

void counting_laws() {
  int errors = 0;
  for (int m = 0; m <= 12; ++m) {
    errors += expanded_length(m) != m * (m + 1) / 2 + 1;
    const auto w = compute_loss_weights(m);
    std::size_t pos = 0;
    for (int g = 0; g <= m; ++g) {
      double sum = 0;
      for (int i = 0; i < (g < m ? m - g : 1); ++i) sum += w[pos++];
      errors += std::abs(sum - 1.0) > 1e-12;
    }
    errors += pos != w.size();
  }
  report(errors == 0, "counting-laws", fmt("M in [0,12], %d violations", errors));
}

// Configuration of the scaled-down headline run.
SyntheticConfig headline_corpus() {
  SyntheticConfig sc;  // 8 diseases, 30 symptoms, 500 / 100
  sc.characteristic_count = 10;  // average record length 5.9
  sc.seed = 7;
  return sc;
}

TrainConfig headline_training() {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 32;
  tc.steps = 1000;
  return tc;
}

}  // namespace

int main() {
  log::set_level(log::Level::warn);
  const auto total_start = Clock::now();

  structural_oracle();
  anchor_equivalence();
  gradient_checks();
  counting_laws();

  // Scaled-down experiment shared by the remaining criteria.
  const auto corpus = generate_synthetic(headline_corpus());
  ExperimentOptions opt;
  opt.protocol = {{TurnMode::limited, 10}, {TurnMode::limited, 5}, {TurnMode::limited, 20}, {TurnMode::fixed, 10}};
  const auto exp_start = Clock::now();
  const auto rep = run_experiment(corpus, desk_model(), headline_training(), opt);
  const double exp_time = seconds_since(exp_start);
  std::ofstream("acceptance_report.json") << rep.to_json().dump(2) << '\n';
  std::printf("%s", rep.format_table().c_str());

  {
    int bad = 0, checked = 0;
    for (const auto& c : rep.cells) {
      bad += std::abs(c.cs - combined_score(c.ac, c.rc)) > 1e-12;
      ++checked;
      for (const auto& s : c.per_seed) {
        bad += std::abs(s.cs - combined_score(s.ac, s.rc)) > 1e-12;
        ++checked;
      }
    }
    const double paper = combined_score(0.85, 0.93);
    report(bad == 0 && std::abs(paper - 0.89) <= 0.005, "metric-laws",
           fmt("%d cells recomputed, %d mismatches; Cs(0.85,0.93)=%.4f (0.89 +/- 0.005)", checked, bad, paper));
  }

  const auto& full = rep.cell("full", TurnMode::limited, 10);
  const auto& plain = rep.cell("plain", TurnMode::limited, 10);
  const auto& no_d = rep.cell("no_d", TurnMode::limited, 10);
  const auto& no_s = rep.cell("no_s", TurnMode::limited, 10);
  report(full.cs >= plain.cs + 0.02 && full.cs >= no_d.cs - 0.01 && full.cs >= no_s.cs - 0.01, "headline-claim",
         fmt("Cs full %.3f, plain %.3f (need full >= plain+0.02), no_d %.3f, no_s %.3f (need full >= each-0.01); "
             "experiment %.0fs (budget 1200s on 8 cores)",
             full.cs, plain.cs, no_d.cs, no_s.cs, exp_time));
  report(no_d.rc >= plain.rc - 0.01, "ablation-direction",
         fmt("Rc no_d %.3f vs plain %.3f (need >= plain-0.01)", no_d.rc, plain.rc));

  {
    long over = 0, short_fixed = 0, repeats = 0, exhausted = 0, episodes = 0;
    for (const auto& c : rep.cells) {
      for (const auto& s : c.per_seed) {
        over += s.violations.over_budget;
        short_fixed += s.violations.short_fixed;
        repeats += s.violations.repeats;
        exhausted += s.violations.exhausted;
        episodes += static_cast<long>(s.episodes);
      }
    }
    report(over + short_fixed + repeats == 0, "protocol-laws",
           fmt("%ld episodes: %ld over budget, %ld short fixed, %ld repeats (%ld vocabulary-exhausted)", episodes, over,
               short_fixed, repeats, exhausted));
  }

  // Invariants measured on the same run.
  const auto& full5 = rep.cell("full", TurnMode::limited, 5);
  const auto& full20 = rep.cell("full", TurnMode::limited, 20);
  report(full20.t < 20.0, "end-learned", fmt("full, limited T_max=20: mean turns %.2f (need < 20)", full20.t));
  report(full20.rc >= full5.rc - 0.02, "budget-monotone",
         fmt("full Rc limited T_max=20 %.3f vs T_max=5 %.3f (need >= -0.02)", full20.rc, full5.rc));

  std::printf("total %.0fs, %d failing\n", seconds_since(total_start), failures);
  return failures == 0 ? 0 : 1;
}
