#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <httplib.h>

#include "coad/augmentation.hpp"
#include "coad/corpus.hpp"
#include "coad/error.hpp"
#include "coad/evaluation.hpp"
#include "coad/log.hpp"
#include "coad/service.hpp"
#include "coad/training.hpp"

namespace coad::cli {
namespace {

namespace fs = std::filesystem;

struct ModelFlags {
  int layers = 2, hidden = 64, heads = 2, ff = 256, max_length = 64;
  double dropout = 0.1;

  void add(CLI::App* app) {
    app->add_option("--layers", layers, "decoder blocks")->capture_default_str();
    app->add_option("--hidden", hidden, "hidden size")->capture_default_str();
    app->add_option("--heads", heads, "attention heads")->capture_default_str();
    app->add_option("--ff", ff, "feed-forward size")->capture_default_str();
    app->add_option("--max-length", max_length, "longest input sequence")->capture_default_str();
    app->add_option("--dropout", dropout, "dropout rate")->capture_default_str();
  }
  ModelConfig config() const {
    ModelConfig c;
    c.layers = layers;
    c.hidden = hidden;
    c.heads = heads;
    c.ff = ff;
    c.max_length = max_length;
    c.dropout = dropout;
    return c;
  }
};

struct TrainFlags {
  std::string variant = "full", weights = "decision", final_label = "end", preset;
  double lr = 1e-3, clip = 1.0;
  int batch = 32, steps = 400;

  void add(CLI::App* app, bool with_variant) {
    if (with_variant) {
      app->add_option("--variant", variant, "full, no_d, no_s or plain")->capture_default_str();
    }
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--batch-size", batch, "sequences per step")->capture_default_str();
    app->add_option("--steps", steps, "optimizer steps")->capture_default_str();
    app->add_option("--clip-norm", clip, "global gradient norm limit (<= 0 disables)")->capture_default_str();
    app->add_option("--weights", weights, "decision, paper_WK or paper_WKprime")->capture_default_str();
    app->add_option("--final-label", final_label, "end or ignore")->capture_default_str();
    app->add_option("--preset", preset, "learning rate and batch size of a full-size setup: dxy, muzhi, muzhi2, ped")
        ->capture_default_str();
  }
  TrainConfig config(std::uint64_t seed) const {
    TrainConfig c;
    if (!preset.empty()) c = TrainConfig::preset(preset);
    else {
      c.lr = lr;
      c.batch_size = batch;
    }
    c.variant = parse_variant(variant);
    c.steps = steps;
    c.clip_norm = clip;
    c.seed = seed;
    c.weights = parse_weight_formula(weights);
    c.final_label = parse_final_label(final_label);
    return c;
  }
};

struct ProtocolFlags {
  std::string mode = "limited";
  std::vector<int> t_max{10};
  bool positive_only = false;
  bool no_mask_repeats = false;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "limited or fixed")->capture_default_str();
    app->add_option("--t-max", t_max, "turn budgets, one report column each")->capture_default_str();
    app->add_flag("--recall-positive-only", positive_only, "count only present implicit symptoms in recall");
    app->add_flag("--no-mask-repeats", no_mask_repeats, "allow repeated picks (a repeat ends the dialogue)");
  }
  std::vector<ProtocolCell> cells() const {
    const auto m = parse_turn_mode(mode);
    std::vector<ProtocolCell> out;
    for (int t : t_max) {
      if (t < 0) throw ConfigError("turn budget must be non-negative");
      if (m == TurnMode::fixed && t == 0) throw ConfigError("fixed mode needs a turn budget of at least 1");
      out.push_back({m, t});
    }
    return out;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

SymptomStatus parse_answer(const std::string& line, bool& ok) {
  ok = true;
  if (line == "y" || line == "yes") return SymptomStatus::present;
  if (line == "n" || line == "no") return SymptomStatus::absent;
  if (line == "u" || line == "unknown" || line == "?") return SymptomStatus::uncertain;
  ok = false;
  return SymptomStatus::uncertain;
}

std::vector<SymptomEntry> parse_explicit(const std::vector<std::string>& items, const Vocab& vocab) {
  std::vector<SymptomEntry> out;
  for (const auto& item : items) {
    auto name = item;
    int status = 1;
    if (const auto colon = item.rfind(':'); colon != std::string::npos) {
      name = item.substr(0, colon);
      const auto code = item.substr(colon + 1);
      if (code != "0" && code != "1" && code != "2") throw ConfigError("bad status in '" + item + "'");
      status = std::stoi(code);
    }
    const int id = vocab.symptom_id(name);
    if (id < 0) throw ConfigError("unknown symptom '" + name + "'");
    out.push_back({id, status_from_int(status)});
  }
  return out;
}

int guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"Collaborative disease and symptom generation for automatic diagnosis"};
  app.set_config("--config", "", "TOML or INI file with default flag values");
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "debug, info, warn, error or off")->capture_default_str();
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "global seed")->capture_default_str();

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic corpus and print its statistics");
  SyntheticConfig sc;
  std::string gen_out = "corpus.jsonl";
  gen->add_option("--out,-o", gen_out, "corpus file")->capture_default_str();
  gen->add_option("--diseases", sc.n_diseases, "disease count")->capture_default_str();
  gen->add_option("--symptoms", sc.n_symptoms, "symptom count")->capture_default_str();
  gen->add_option("--characteristic", sc.characteristic_count, "profile size per disease")->capture_default_str();
  gen->add_option("--presence", sc.presence_prob, "probability a profile symptom is present")->capture_default_str();
  gen->add_option("--negative", sc.negative_prob, "probability of a denied confounder per positive implicit symptom")
      ->capture_default_str();
  gen->add_option("--noise", sc.noise_prob, "probability of one off-profile symptom")->capture_default_str();
  gen->add_option("--explicit-min", sc.explicit_min, "")->capture_default_str();
  gen->add_option("--explicit-max", sc.explicit_max, "")->capture_default_str();
  gen->add_option("--implicit-min", sc.implicit_min, "")->capture_default_str();
  gen->add_option("--implicit-max", sc.implicit_max, "")->capture_default_str();
  gen->add_option("--train", sc.train_size, "training records")->capture_default_str();
  gen->add_option("--test", sc.test_size, "test records")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train one model and write a checkpoint");
  std::string corpus_path = "corpus.jsonl", checkpoint = "model.ckpt", train_log;
  ModelFlags model_flags;
  TrainFlags train_flags;
  tr->add_option("--corpus", corpus_path, "corpus file")->capture_default_str();
  tr->add_option("--out,-o", checkpoint, "checkpoint file")->capture_default_str();
  tr->add_option("--log", train_log, "line-delimited training log (empty: stdout)")->capture_default_str();
  model_flags.add(tr);
  train_flags.add(tr, true);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "evaluate checkpoints on the test split");
  std::vector<std::string> checkpoints{"model.ckpt"};
  std::string report_out;
  ProtocolFlags protocol_flags;
  ev->add_option("--corpus", corpus_path, "corpus file")->capture_default_str();
  ev->add_option("--checkpoint", checkpoints, "checkpoints; rows group them by variant")->capture_default_str();
  ev->add_option("--report", report_out, "machine-readable report file")->capture_default_str();
  protocol_flags.add(ev);

  // experiment
  auto* ex = app.add_subcommand("experiment", "train every variant for every seed and evaluate");
  std::vector<std::string> variants{"full", "no_d", "no_s", "plain"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool serial = false;
  ex->add_option("--corpus", corpus_path, "corpus file")->capture_default_str();
  ex->add_option("--variants", variants, "variants to train")->capture_default_str();
  ex->add_option("--seeds", seeds, "training seeds")->capture_default_str();
  ex->add_option("--report", report_out, "machine-readable report file")->capture_default_str();
  ex->add_flag("--serial", serial, "run jobs one after another");
  model_flags.add(ex);
  train_flags.add(ex, false);
  protocol_flags.add(ex);

  // inspect-sample
  auto* insp = app.add_subcommand("inspect-sample", "print the expanded training view of one record");
  std::size_t record_index = 0;
  std::string split = "train", final_label = "end", weights = "decision";
  insp->add_option("--corpus", corpus_path, "corpus file")->capture_default_str();
  insp->add_option("--index", record_index, "record index within the split")->capture_default_str();
  insp->add_option("--split", split, "train or test")->capture_default_str();
  insp->add_option("--final-label", final_label, "end or ignore")->capture_default_str();
  insp->add_option("--weights", weights, "decision, paper_WK or paper_WKprime")->capture_default_str();

  // diagnose
  auto* dg = app.add_subcommand("diagnose", "interactive diagnosis: answer the agent's questions");
  std::vector<std::string> explicit_items;
  std::string mode = "limited";
  int t_max = 10;
  dg->add_option("--checkpoint", checkpoints, "checkpoint file")->capture_default_str();
  dg->add_option("--explicit", explicit_items, "initial symptoms as name or name:status")->required();
  dg->add_option("--mode", mode, "limited or fixed")->capture_default_str();
  dg->add_option("--t-max", t_max, "turn budget")->capture_default_str();

  // serve
  auto* sv = app.add_subcommand("serve", "serve the session API over HTTP");
  std::string host = "127.0.0.1";
  int port = 8080, idle_minutes = 30;
  sv->add_option("--checkpoint", checkpoints, "checkpoint file")->capture_default_str();
  sv->add_option("--host", host, "bind address")->capture_default_str();
  sv->add_option("--port", port, "port")->capture_default_str();
  sv->add_option("--idle-minutes", idle_minutes, "session idle expiry")->capture_default_str();

  // report
  auto* rp = app.add_subcommand("report", "summarize a training log or an evaluation report");
  std::string report_in;
  rp->add_option("input", report_in, "training log (.jsonl) or report (.json)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  return guarded(
      [&] {
        const std::map<std::string, log::Level> levels{{"debug", log::Level::debug}, {"info", log::Level::info},
                                                       {"warn", log::Level::warn},   {"error", log::Level::error},
                                                       {"off", log::Level::off}};
        if (!levels.contains(log_level)) throw ConfigError("unknown log level '" + log_level + "'");
        log::set_level(levels.at(log_level));

        if (*gen) {
          sc.seed = seed;
          const auto corpus = generate_synthetic(sc);
          write_corpus(corpus, fs::path(gen_out));
          out << format_stats(corpus_stats(corpus));
        } else if (*tr) {
          const auto corpus = load_corpus(corpus_path);
          auto mc = model_flags.config();
          mc.seed = seed;
          const auto tc = train_flags.config(seed);
          std::ofstream log_file;
          std::ostream* log_out = &out;
          if (!train_log.empty()) {
            log_file.open(train_log);
            if (!log_file) throw std::runtime_error("cannot write " + train_log);
            log_out = &log_file;
          }
          auto result = train<float>(corpus, mc, tc, log_out);
          result.model.save(checkpoint, corpus.vocab, {{"train", tc.to_json()}});
          err << "wrote " << checkpoint << " (" << result.model.parameter_count() << " parameters)\n";
        } else if (*ev) {
          const auto corpus = load_corpus(corpus_path);
          const auto cells = protocol_flags.cells();
          std::vector<std::string> order;
          std::map<std::string, std::vector<std::vector<SeedMetrics>>> by_variant;
          for (const auto& path : checkpoints) {
            if (!fs::exists(path)) throw DataError("checkpoint '" + path + "' does not exist");
            const auto loaded = load_model<float>(path);
            if (!(loaded.vocab == corpus.vocab)) throw DataError("checkpoint vocabulary differs from the corpus");
            const auto& train_meta = loaded.meta.value("train", nlohmann::json::object());
            const auto variant = train_meta.value("variant", std::string("full"));
            const auto ck_seed = train_meta.value("seed", std::uint64_t{0});
            if (!by_variant.contains(variant)) {
              order.push_back(variant);
              by_variant[variant].resize(cells.size());
            }
            for (std::size_t c = 0; c < cells.size(); ++c) {
              EvalOptions eo{cells[c].mode, cells[c].t_max, protocol_flags.positive_only,
                             InquiryOptions{!protocol_flags.no_mask_repeats}};
              by_variant[variant][c].push_back(evaluate(loaded.model, corpus.vocab, corpus.test, eo, ck_seed));
            }
          }
          MetricsReport report;
          for (const auto& v : order) {
            for (std::size_t c = 0; c < cells.size(); ++c) {
              report.cells.push_back(CellMetrics::aggregate(v, cells[c].mode, cells[c].t_max, by_variant[v][c]));
            }
          }
          report.config = {{"checkpoints", checkpoints},
                           {"recall_positive_only", protocol_flags.positive_only},
                           {"mask_repeats", !protocol_flags.no_mask_repeats}};
          out << report.format_table();
          if (!report_out.empty()) write_text(report_out, report.to_json().dump(2) + "\n");
        } else if (*ex) {
          const auto corpus = load_corpus(corpus_path);
          ExperimentOptions eo;
          eo.variants.clear();
          for (const auto& v : variants) eo.variants.push_back(parse_variant(v));
          eo.seeds = seeds;
          eo.protocol = protocol_flags.cells();
          eo.recall_positive_only = protocol_flags.positive_only;
          eo.inquiry.mask_repeats = !protocol_flags.no_mask_repeats;
          eo.parallel = !serial;
          const auto report = run_experiment(corpus, model_flags.config(), train_flags.config(seed), eo);
          out << report.format_table();
          if (!report_out.empty()) write_text(report_out, report.to_json().dump(2) + "\n");
        } else if (*insp) {
          const auto corpus = load_corpus(corpus_path);
          if (split != "train" && split != "test") throw ConfigError("split must be train or test");
          const auto& records = split == "train" ? corpus.train : corpus.test;
          if (record_index >= records.size()) {
            throw ConfigError("index " + std::to_string(record_index) + " is outside the " + split + " split (" +
                              std::to_string(records.size()) + " records)");
          }
          const auto index = build_prefix_index(corpus.train);
          const auto sample = expand_record(records[record_index], index, corpus.vocab,
                                            {parse_final_label(final_label), parse_weight_formula(weights)});
          out << format_sample(sample, corpus.vocab);
        } else if (*dg) {
          if (checkpoints.size() != 1) throw ConfigError("diagnose takes exactly one checkpoint");
          if (!fs::exists(checkpoints[0])) throw DataError("checkpoint '" + checkpoints[0] + "' does not exist");
          const auto loaded = load_model<float>(checkpoints[0]);
          DialogueSession session(loaded.vocab, parse_explicit(explicit_items, loaded.vocab), parse_turn_mode(mode),
                                  t_max);
          while (!session.ready_to_diagnose()) {
            const int pick = next_inquiry(loaded.model, session);
            if (pick == loaded.vocab.end_id()) break;
            for (;;) {
              out << "Agent asks: " << loaded.vocab.symptom_name(pick) << "? [y/n/u] " << std::flush;
              std::string line;
              if (!std::getline(in, line)) throw std::runtime_error("input ended before the dialogue finished");
              bool ok;
              const auto status = parse_answer(line, ok);
              if (ok) {
                session.answer(status);
                break;
              }
              out << "please answer y, n or u\n";
            }
          }
          const auto& d = diagnose(loaded.model, session);
          out << "Diagnosis: " << loaded.vocab.disease_name(d.disease) << " after " << session.turns()
              << " inquiries\n";
          for (const auto& [k, p] : d.top(3)) {
            out << "  " << std::left << std::setw(24) << loaded.vocab.disease_name(k) << std::right << std::fixed
                << std::setprecision(3) << p << '\n';
          }
        } else if (*sv) {
          if (checkpoints.size() != 1) throw ConfigError("serve takes exactly one checkpoint");
          if (!fs::exists(checkpoints[0])) throw DataError("checkpoint '" + checkpoints[0] + "' does not exist");
          auto loaded = load_model<float>(checkpoints[0]);
          ServiceOptions so;
          so.idle_timeout = std::chrono::minutes(idle_minutes);
          auto model = std::make_shared<const CoadModel<float>>(std::move(loaded.model));
          DiagnosisService service(model, loaded.vocab, so);
          httplib::Server server;
          service.mount(server);
          err << "listening on " << host << ':' << port << '\n';
          if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
        } else if (*rp) {
          std::ifstream f(report_in);
          if (!f) throw DataError("cannot read " + report_in);
          std::stringstream buffer;
          buffer << f.rdbuf();
          const auto text = buffer.str();
          const auto whole = nlohmann::json::parse(text, nullptr, false);
          if (!whole.is_discarded() && whole.is_object() && whole.contains("cells")) {
            out << MetricsReport::from_json(whole).format_table();
            return;
          }
          out << std::left << std::setw(8) << "epoch" << std::setw(8) << "step" << std::setw(12) << "loss_total"
              << std::setw(12) << "loss_sym" << std::setw(12) << "loss_dis" << '\n';
          std::istringstream lines(text);
          std::string line;
          std::size_t n = 0;
          while (std::getline(lines, line)) {
            if (line.empty()) continue;
            const auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.contains("loss_total")) {
              throw DataError("line " + std::to_string(n + 1) + " of " + report_in + " is not a training log record");
            }
            ++n;
            out << std::left << std::setw(8) << j.value("epoch", 0) << std::setw(8) << j.value("step", 0L)
                << std::fixed << std::setprecision(4) << std::setw(12) << j["loss_total"].get<double>()
                << std::setw(12) << j.value("loss_sym", 0.0) << std::setw(12) << j.value("loss_dis", 0.0) << '\n';
          }
          if (n == 0) throw DataError(report_in + " holds no training log records");
        }
      },
      err);
}

}  // namespace coad::cli
