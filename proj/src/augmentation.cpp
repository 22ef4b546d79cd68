#include "coad/augmentation.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "coad/error.hpp"

namespace coad {

FinalLabel parse_final_label(const std::string& name) {
  if (name == "end") return FinalLabel::end;
  if (name == "ignore") return FinalLabel::ignore;
  throw ConfigError("final label must be 'end' or 'ignore', got '" + name + "'");
}

WeightFormula parse_weight_formula(const std::string& name) {
  if (name == "decision") return WeightFormula::decision;
  if (name == "paper_WK" || name == "paper_wk") return WeightFormula::paper_wk;
  if (name == "paper_WKprime" || name == "paper_wkprime") return WeightFormula::paper_wkprime;
  throw ConfigError("weight formula must be decision, paper_WK or paper_WKprime, got '" + name + "'");
}

std::string to_string(FinalLabel v) { return v == FinalLabel::end ? "end" : "ignore"; }

std::string to_string(WeightFormula v) {
  switch (v) {
    case WeightFormula::decision: return "decision";
    case WeightFormula::paper_wk: return "paper_WK";
    case WeightFormula::paper_wkprime: return "paper_WKprime";
  }
  return "decision";
}

AttentionMask AttentionMask::causal(std::size_t n) {
  AttentionMask mask(n);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t k = 0; k <= q; ++k) mask.set(q, k);
  }
  return mask;
}

namespace {

// Availability of the symptom set `ids` for a record whose complete set is
// `full_set`: no other training record has exactly this complete symptom set.
bool available(const std::vector<int>& full_set, std::vector<int> ids,
               const PrefixIndex& index) {
  auto set = symptom_set(ids);
  int collisions = index.count(set);
  if (set == full_set) --collisions;
  return collisions <= 0;
}

std::vector<int> explicit_ids(const PatientRecord& record) {
  std::vector<int> ids;
  for (const auto& e : record.explicit_symptoms) ids.push_back(e.symptom);
  return ids;
}

}  // namespace

std::vector<int> align_d_labels(const PatientRecord& record, const PrefixIndex& index) {
  const auto full = symptom_set(record);
  std::vector<int> prefix = explicit_ids(record);
  std::vector<int> out;
  out.reserve(record.implicit_symptoms.size());
  for (const auto& e : record.implicit_symptoms) {
    prefix.push_back(e.symptom);
    out.push_back(available(full, prefix, index) ? record.disease : kIgnore);
  }
  return out;
}

std::vector<int> expand_s_labels(const PatientRecord& record, int end_id, FinalLabel final_label) {
  const int m = record.m();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(expanded_length(m)));
  for (int g = 0; g < m; ++g) {
    for (int t = g; t < m; ++t) out.push_back(record.implicit_symptoms[static_cast<std::size_t>(t)].symptom);
  }
  out.push_back(final_label == FinalLabel::end ? end_id : kIgnore);
  return out;
}

std::vector<int> expand_d_labels(const PatientRecord& record, std::span<const int> aligned, const PrefixIndex& index) {
  const int m = record.m();
  if (static_cast<int>(aligned.size()) != m) {
    throw ShapeError("aligned d-labels must have one entry per implicit symptom");
  }
  const auto full = symptom_set(record);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(expanded_length(m)));
  std::vector<int> context = explicit_ids(record);
  for (int g = 0; g < m; ++g) {
    for (int t = g; t < m; ++t) {
      if (t == g) {
        out.push_back(aligned[static_cast<std::size_t>(g)]);
        continue;
      }
      auto probe = context;
      probe.push_back(record.implicit_symptoms[static_cast<std::size_t>(t)].symptom);
      out.push_back(available(full, std::move(probe), index) ? record.disease : kIgnore);
    }
    context.push_back(record.implicit_symptoms[static_cast<std::size_t>(g)].symptom);
  }
  out.push_back(record.disease);
  return out;
}

RepeatedInput build_repeated_input(const PatientRecord& record) {
  const int n = record.n();
  const int m = record.m();
  if (n < 1) throw DataError("record needs at least one explicit symptom");
  const auto plain = record.plain_sequence();

  RepeatedInput out;
  out.tokens.assign(plain.begin(), plain.begin() + (n - 1));
  int index = 0;
  for (int g = 0; g <= m; ++g) {
    const int size = g < m ? m - g : 1;
    const auto& token = plain[static_cast<std::size_t>(n - 1 + g)];
    for (int i = 0; i < size; ++i, ++index) {
      out.tokens.push_back(token);
      out.group_of.push_back(g);
    }
    out.anchors.push_back(index - 1);
  }
  return out;
}

AttentionMask build_attention_mask(int n, int m) {
  if (n < 1 || m < 0) throw ShapeError("attention mask needs n >= 1 and m >= 0");
  const auto prefix = static_cast<std::size_t>(n - 1);
  const auto length = prefix + static_cast<std::size_t>(expanded_length(m));
  AttentionMask mask(length);

  for (std::size_t q = 0; q < prefix; ++q) {
    for (std::size_t k = 0; k <= q; ++k) mask.set(q, k);
  }

  std::vector<std::size_t> anchors;  // absolute positions of completed groups
  std::size_t pos = prefix;
  for (int g = 0; g <= m; ++g) {
    const int size = g < m ? m - g : 1;
    for (int i = 0; i < size; ++i, ++pos) {
      for (std::size_t k = 0; k < prefix; ++k) mask.set(pos, k);
      for (std::size_t a : anchors) mask.set(pos, a);
      mask.set(pos, pos);
    }
    anchors.push_back(pos - 1);
  }
  return mask;
}

std::vector<double> compute_loss_weights(int m, WeightFormula formula) {
  if (m < 0) throw ShapeError("implicit count must be non-negative");
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(expanded_length(m)));
  for (int g = 0; g < m; ++g) {
    for (int t = g; t < m; ++t) {
      switch (formula) {
        case WeightFormula::decision:
          out.push_back(1.0 / (m - g));
          break;
        case WeightFormula::paper_wk:
          // T = t + 1 (1-based), W = 1 / (M - T + 1)
          out.push_back(1.0 / (m - t));
          break;
        case WeightFormula::paper_wkprime:
          out.push_back(1.0 / std::max(m - g - 1, 1));
          break;
      }
    }
  }
  out.push_back(1.0);
  return out;
}

ExpandedSample expand_record(const PatientRecord& record, const PrefixIndex& index, const Vocab& vocab,
                             const AugmentOptions& options) {
  validate_record(record, vocab);
  ExpandedSample s;
  s.n = record.n();
  s.m = record.m();
  s.plain_tokens = record.plain_sequence();
  auto repeated = build_repeated_input(record);
  s.repeated_tokens = std::move(repeated.tokens);
  s.group_of = std::move(repeated.group_of);
  s.anchors = std::move(repeated.anchors);
  s.s_labels = expand_s_labels(record, vocab.end_id(), options.final_label);
  const auto aligned = align_d_labels(record, index);
  s.d_labels = expand_d_labels(record, aligned, index);
  s.weights = compute_loss_weights(s.m, options.weights);
  for (std::size_t i = 0; i < s.weights.size(); ++i) {
    if (s.s_labels[i] == kIgnore && s.d_labels[i] == kIgnore) s.weights[i] = 0.0;
  }
  s.mask = build_attention_mask(s.n, s.m);
  return s;
}

std::string format_sample(const ExpandedSample& sample, const Vocab& vocab) {
  const auto prefix = static_cast<std::size_t>(sample.prefix_length());
  struct Row {
    std::string pos, token, status, group, s_label, d_label, weight;
  };
  std::vector<Row> rows;
  rows.push_back({"pos", "token", "status", "group", "s-label", "d-label", "weight"});
  for (std::size_t i = 0; i < sample.repeated_tokens.size(); ++i) {
    const auto& tok = sample.repeated_tokens[i];
    Row row{std::to_string(i), vocab.symptom_name(tok.symptom), std::to_string(to_int(tok.status)), "-", "-", "-",
            "-"};
    if (i >= prefix) {
      const auto r = i - prefix;
      row.group = std::to_string(sample.group_of[r]);
      row.s_label = vocab.token_name(sample.s_labels[r]);
      row.d_label = sample.d_labels[r] == kIgnore ? Vocab::kIgnoreName : vocab.disease_name(sample.d_labels[r]);
      std::ostringstream w;
      w << std::fixed << std::setprecision(4) << sample.weights[r];
      row.weight = w.str();
    }
    rows.push_back(std::move(row));
  }

  std::size_t widths[7] = {};
  for (const auto& r : rows) {
    const std::string* cells[7] = {&r.pos, &r.token, &r.status, &r.group, &r.s_label, &r.d_label, &r.weight};
    for (int c = 0; c < 7; ++c) widths[c] = std::max(widths[c], cells[c]->size());
  }
  std::ostringstream os;
  for (const auto& r : rows) {
    const std::string* cells[7] = {&r.pos, &r.token, &r.status, &r.group, &r.s_label, &r.d_label, &r.weight};
    for (int c = 0; c < 7; ++c) {
      if (c > 0) os << " | ";
      if (c == 6) {
        os << *cells[c];
      } else {
        os << std::left << std::setw(static_cast<int>(widths[c])) << *cells[c];
      }
    }
    os << '\n';
  }
  os << "mask\n";
  for (std::size_t q = 0; q < sample.mask.size(); ++q) {
    for (std::size_t k = 0; k < sample.mask.size(); ++k) os << (sample.mask(q, k) ? '1' : '.');
    os << '\n';
  }
  return os.str();
}

}  // namespace coad
