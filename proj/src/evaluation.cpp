#include "coad/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "coad/error.hpp"
#include "coad/log.hpp"

namespace coad {

EpisodeMetrics episode_metrics(const EpisodeResult& episode, const PatientRecord& record, bool positive_only) {
  EpisodeMetrics m;
  m.hit = episode.predicted == record.disease ? 1 : 0;
  m.turns = episode.turns;
  const std::set<int> asked(episode.inquired.begin(), episode.inquired.end());
  int denominator = 0, found = 0;
  for (const auto& e : record.implicit_symptoms) {
    if (positive_only && e.status != SymptomStatus::present) continue;
    ++denominator;
    found += asked.count(e.symptom) ? 1 : 0;
  }
  m.recall = denominator == 0 ? 1.0 : static_cast<double>(found) / denominator;
  return m;
}

double combined_score(double ac, double rc) { return ac + rc > 0 ? 2 * rc * ac / (rc + ac) : 0.0; }

template <typename T>
SeedMetrics evaluate(const CoadModel<T>& model, const Vocab& vocab, std::span<const PatientRecord> test,
                     const EvalOptions& options, std::uint64_t seed) {
  if (test.empty()) throw ConfigError("test set is empty");
  SeedMetrics out;
  out.seed = seed;
  out.episodes = test.size();
  double hits = 0, recall = 0, turns = 0;
  for (const auto& record : test) {
    const auto ep = run_episode(model, vocab, record, options.mode, options.t_max, options.inquiry);
    const auto m = episode_metrics(ep, record, options.recall_positive_only);
    hits += m.hit;
    recall += m.recall;
    turns += m.turns;

    std::set<int> seen;
    for (const auto& e : record.explicit_symptoms) seen.insert(e.symptom);
    for (int s : ep.inquired) {
      if (!seen.insert(s).second) ++out.violations.repeats;
    }
    if (options.mode == TurnMode::limited && ep.turns > options.t_max) ++out.violations.over_budget;
    if (options.mode == TurnMode::fixed && ep.turns != options.t_max) {
      if (ep.vocabulary_exhausted) {
        ++out.violations.exhausted;
      } else {
        ++out.violations.short_fixed;
      }
    }
  }
  const auto n = static_cast<double>(test.size());
  out.ac = hits / n;
  out.rc = recall / n;
  out.cs = combined_score(out.ac, out.rc);
  out.t = turns / n;
  return out;
}

template SeedMetrics evaluate(const CoadModel<float>&, const Vocab&, std::span<const PatientRecord>,
                              const EvalOptions&, std::uint64_t);
template SeedMetrics evaluate(const CoadModel<double>&, const Vocab&, std::span<const PatientRecord>,
                              const EvalOptions&, std::uint64_t);

CellMetrics CellMetrics::aggregate(std::string variant, TurnMode mode, int t_max, std::vector<SeedMetrics> per_seed) {
  CellMetrics c;
  c.variant = std::move(variant);
  c.mode = mode;
  c.t_max = t_max;
  for (const auto& s : per_seed) {
    c.ac += s.ac;
    c.rc += s.rc;
    c.t += s.t;
  }
  if (!per_seed.empty()) {
    const auto n = static_cast<double>(per_seed.size());
    c.ac /= n;
    c.rc /= n;
    c.t /= n;
  }
  c.cs = combined_score(c.ac, c.rc);
  c.per_seed = std::move(per_seed);
  return c;
}

const CellMetrics& MetricsReport::cell(const std::string& variant, TurnMode mode, int t_max) const {
  for (const auto& c : cells) {
    if (c.variant == variant && c.mode == mode && c.t_max == t_max) return c;
  }
  throw ConfigError("report has no cell for " + variant + " " + to_string(mode) + " " + std::to_string(t_max));
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json out;
  out["cells"] = nlohmann::json::array();
  for (const auto& c : cells) {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& s : c.per_seed) {
      seeds.push_back({{"seed", s.seed},
                       {"Ac", s.ac},
                       {"Rc", s.rc},
                       {"Cs", s.cs},
                       {"T", s.t},
                       {"episodes", s.episodes},
                       {"violations",
                        {{"over_budget", s.violations.over_budget},
                         {"short_fixed", s.violations.short_fixed},
                         {"repeats", s.violations.repeats},
                         {"exhausted", s.violations.exhausted}}}});
    }
    out["cells"].push_back({{"variant", c.variant},
                            {"mode", to_string(c.mode)},
                            {"T_max", c.t_max},
                            {"Ac", c.ac},
                            {"Rc", c.rc},
                            {"Cs", c.cs},
                            {"T", c.t},
                            {"per_seed", seeds}});
  }
  out["config"] = config;
  return out;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    for (const auto& c : j.at("cells")) {
      std::vector<SeedMetrics> seeds;
      for (const auto& s : c.at("per_seed")) {
        SeedMetrics m;
        m.seed = s.at("seed").get<std::uint64_t>();
        m.ac = s.at("Ac").get<double>();
        m.rc = s.at("Rc").get<double>();
        m.cs = s.at("Cs").get<double>();
        m.t = s.at("T").get<double>();
        m.episodes = s.value("episodes", std::size_t{0});
        if (s.contains("violations")) {
          const auto& v = s["violations"];
          m.violations.over_budget = v.value("over_budget", 0L);
          m.violations.short_fixed = v.value("short_fixed", 0L);
          m.violations.repeats = v.value("repeats", 0L);
          m.violations.exhausted = v.value("exhausted", 0L);
        }
        seeds.push_back(m);
      }
      CellMetrics cell;
      cell.variant = c.at("variant").get<std::string>();
      cell.mode = parse_turn_mode(c.at("mode").get<std::string>());
      cell.t_max = c.at("T_max").get<int>();
      cell.ac = c.at("Ac").get<double>();
      cell.rc = c.at("Rc").get<double>();
      cell.cs = c.at("Cs").get<double>();
      cell.t = c.at("T").get<double>();
      cell.per_seed = std::move(seeds);
      r.cells.push_back(std::move(cell));
    }
    r.config = j.value("config", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string MetricsReport::format_table() const {
  std::vector<std::string> variants;
  std::vector<std::pair<TurnMode, int>> columns;
  for (const auto& c : cells) {
    if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) variants.push_back(c.variant);
    const std::pair<TurnMode, int> key{c.mode, c.t_max};
    if (std::find(columns.begin(), columns.end(), key) == columns.end()) columns.push_back(key);
  }
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-8s", "variant");
  out << buf;
  for (const auto& [mode, t_max] : columns) {
    const auto title = to_string(mode) + " T=" + std::to_string(t_max);
    std::snprintf(buf, sizeof buf, " | %-27s", title.c_str());
    out << buf;
  }
  out << '\n' << std::string(8, ' ');
  for (std::size_t i = 0; i < columns.size(); ++i) {
    std::snprintf(buf, sizeof buf, " | %6s %6s %6s %6s", "Ac", "Rc", "Cs", "T");
    out << buf;
  }
  out << '\n';
  for (const auto& v : variants) {
    std::snprintf(buf, sizeof buf, "%-8s", v.c_str());
    out << buf;
    for (const auto& [mode, t_max] : columns) {
      const auto it = std::find_if(cells.begin(), cells.end(), [&](const CellMetrics& c) {
        return c.variant == v && c.mode == mode && c.t_max == t_max;
      });
      if (it == cells.end()) {
        std::snprintf(buf, sizeof buf, " | %27s", "-");
      } else {
        std::snprintf(buf, sizeof buf, " | %6.3f %6.3f %6.3f %6.2f", it->ac, it->rc, it->cs, it->t);
      }
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

MetricsReport run_experiment(const Corpus& corpus, const ModelConfig& model_config, const TrainConfig& train_config,
                             const ExperimentOptions& options) {
  if (options.variants.empty()) throw ConfigError("no variants requested");
  if (options.seeds.empty()) throw ConfigError("at least one seed is required");
  if (options.protocol.empty()) throw ConfigError("protocol has no cells");
  if (corpus.test.empty()) throw ConfigError("test set is empty");
  for (const auto& p : options.protocol) {
    if (p.t_max < 0 || (p.mode == TurnMode::fixed && p.t_max == 0)) {
      throw ConfigError("invalid turn budget " + std::to_string(p.t_max) + " for " + to_string(p.mode) + " mode");
    }
  }
  train_config.validate();
  model_config.with_vocab(corpus.vocab).validate();

  const auto jobs = options.variants.size() * options.seeds.size();
  // results[job][cell]
  std::vector<std::vector<SeedMetrics>> results(jobs);
  std::vector<std::string> errors(jobs);
  const auto run_job = [&](std::size_t job) {
    const auto variant = options.variants[job / options.seeds.size()];
    const auto seed = options.seeds[job % options.seeds.size()];
    try {
      auto tc = train_config;
      tc.variant = variant;
      tc.seed = seed;
      auto mc = model_config;
      mc.seed = seed;
      auto trained = train<float>(corpus, mc, tc);
      for (const auto& p : options.protocol) {
        EvalOptions eo{p.mode, p.t_max, options.recall_positive_only, options.inquiry};
        results[job].push_back(evaluate(trained.model, corpus.vocab, corpus.test, eo, seed));
      }
      log::info("finished " + to_string(variant) + " seed " + std::to_string(seed));
    } catch (const std::exception& e) {
      errors[job] = to_string(variant) + " seed " + std::to_string(seed) + ": " + e.what();
    }
  };
  if (options.parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t job = 0; job < static_cast<std::ptrdiff_t>(jobs); ++job) run_job(static_cast<std::size_t>(job));
  } else {
    for (std::size_t job = 0; job < jobs; ++job) run_job(job);
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw std::runtime_error("experiment job failed: " + e);
  }

  MetricsReport report;
  for (std::size_t v = 0; v < options.variants.size(); ++v) {
    for (std::size_t c = 0; c < options.protocol.size(); ++c) {
      std::vector<SeedMetrics> per_seed;
      for (std::size_t s = 0; s < options.seeds.size(); ++s) {
        per_seed.push_back(results[v * options.seeds.size() + s][c]);
      }
      report.cells.push_back(CellMetrics::aggregate(to_string(options.variants[v]), options.protocol[c].mode,
                                                    options.protocol[c].t_max, std::move(per_seed)));
    }
  }
  nlohmann::json protocol = nlohmann::json::array();
  for (const auto& p : options.protocol) protocol.push_back({{"mode", to_string(p.mode)}, {"T_max", p.t_max}});
  report.config = {{"model", model_config.with_vocab(corpus.vocab).to_json()},
                   {"train", train_config.to_json()},
                   {"seeds", options.seeds},
                   {"protocol", protocol},
                   {"recall_positive_only", options.recall_positive_only},
                   {"mask_repeats", options.inquiry.mask_repeats}};
  report.config["train"].erase("variant");
  report.config["train"].erase("seed");
  return report;
}

}  // namespace coad
