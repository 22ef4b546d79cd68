#pragma once

// Independent reference constructions used as test oracles. Nothing here
// calls into the augmentation module.

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <vector>

#include "coad/augmentation.hpp"
#include "coad/corpus.hpp"
#include "coad/rng.hpp"
#include "coad/tensor/ops.hpp"

namespace coad::oracle {

inline Vocab numbered_vocab(int symptoms, int diseases) {
  std::vector<std::string> s, d;
  for (int i = 0; i < symptoms; ++i) s.push_back("s" + std::to_string(i));
  for (int i = 0; i < diseases; ++i) d.push_back("d" + std::to_string(i));
  return Vocab(s, d);
}

inline PatientRecord random_record(Rng& rng, int symptom_pool, int diseases, int max_n, int max_m) {
  std::vector<int> ids(static_cast<std::size_t>(symptom_pool));
  for (int i = 0; i < symptom_pool; ++i) ids[static_cast<std::size_t>(i)] = i;
  rng.shuffle(std::span<int>(ids));
  const int n = rng.range(1, std::min(max_n, symptom_pool));
  const int m = rng.range(0, std::min(max_m, symptom_pool - n));
  PatientRecord r;
  for (int i = 0; i < n + m; ++i) {
    SymptomEntry e{ids[static_cast<std::size_t>(i)], rng.bernoulli(0.8) ? SymptomStatus::present : SymptomStatus::absent};
    (i < n ? r.explicit_symptoms : r.implicit_symptoms).push_back(e);
  }
  r.disease = static_cast<int>(rng.below(static_cast<std::uint64_t>(diseases)));
  return r;
}

inline std::set<int> id_set(const std::vector<SymptomEntry>& entries) {
  std::set<int> out;
  for (const auto& e : entries) out.insert(e.symptom);
  return out;
}

// True when no training record other than train[self] has exactly `symptoms`
// as its complete symptom set.
inline bool available_by_scan(const std::set<int>& symptoms, const std::vector<PatientRecord>& train, std::size_t self) {
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (i == self) continue;
    auto all = id_set(train[i].explicit_symptoms);
    for (const auto& e : train[i].implicit_symptoms) all.insert(e.symptom);
    if (all == symptoms) return false;
  }
  return true;
}

struct Expected {
  std::vector<SymptomEntry> repeated_tokens;
  std::vector<int> group_of;
  std::vector<int> anchors;
  std::vector<int> s_labels;
  std::vector<int> d_labels;
  std::vector<double> weights;
  std::vector<std::vector<bool>> mask;
};

// Visibility straight from the rule: prefix positions are causal; a repeated
// position sees the whole prefix, the last position of every earlier group,
// and itself.
inline std::vector<std::vector<bool>> mask_by_rule(int n, int m) {
  std::vector<int> group;  // -1 for prefix
  for (int i = 0; i < n - 1; ++i) group.push_back(-1);
  for (int g = 0; g <= m; ++g) {
    const int size = g < m ? m - g : 1;
    for (int i = 0; i < size; ++i) group.push_back(g);
  }
  const auto len = group.size();
  std::vector<bool> last_of_group(len, false);
  for (std::size_t i = 0; i < len; ++i) {
    last_of_group[i] = group[i] >= 0 && (i + 1 == len || group[i + 1] != group[i]);
  }
  std::vector<std::vector<bool>> mask(len, std::vector<bool>(len, false));
  for (std::size_t q = 0; q < len; ++q) {
    for (std::size_t k = 0; k < len; ++k) {
      if (group[q] < 0) {
        mask[q][k] = group[k] < 0 && k <= q;
      } else {
        mask[q][k] = group[k] < 0 || k == q || (last_of_group[k] && group[k] < group[q]);
      }
    }
  }
  return mask;
}

// train[self] is the record being expanded.
inline Expected expand_by_definition(const std::vector<PatientRecord>& train, std::size_t self, int end_id,
                                     FinalLabel final_label = FinalLabel::end) {
  const auto& r = train[self];
  const int n = r.n();
  const int m = r.m();
  std::vector<SymptomEntry> plain = r.explicit_symptoms;
  plain.insert(plain.end(), r.implicit_symptoms.begin(), r.implicit_symptoms.end());

  Expected e;
  for (int i = 0; i + 1 < n; ++i) e.repeated_tokens.push_back(plain[static_cast<std::size_t>(i)]);
  const auto explicit_set = id_set(r.explicit_symptoms);
  for (int g = 0; g < m; ++g) {
    std::set<int> context = explicit_set;
    for (int j = 0; j < g; ++j) context.insert(r.implicit_symptoms[static_cast<std::size_t>(j)].symptom);
    for (int t = g; t < m; ++t) {
      e.repeated_tokens.push_back(plain[static_cast<std::size_t>(n - 1 + g)]);
      e.group_of.push_back(g);
      e.s_labels.push_back(r.implicit_symptoms[static_cast<std::size_t>(t)].symptom);
      auto probe = context;
      probe.insert(r.implicit_symptoms[static_cast<std::size_t>(t)].symptom);
      e.d_labels.push_back(available_by_scan(probe, train, self) ? r.disease : kIgnore);
      e.weights.push_back(1.0 / (m - g));
    }
    e.anchors.push_back(static_cast<int>(e.group_of.size()) - 1);
  }
  e.repeated_tokens.push_back(plain.back());
  e.group_of.push_back(m);
  e.s_labels.push_back(final_label == FinalLabel::end ? end_id : kIgnore);
  e.d_labels.push_back(r.disease);
  e.weights.push_back(1.0);
  e.anchors.push_back(static_cast<int>(e.group_of.size()) - 1);
  for (std::size_t i = 0; i < e.weights.size(); ++i) {
    if (e.s_labels[i] == kIgnore && e.d_labels[i] == kIgnore) e.weights[i] = 0.0;
  }
  e.mask = mask_by_rule(n, m);
  return e;
}

inline bool matches(const ExpandedSample& s, const Expected& e, std::string* why = nullptr) {
  const auto fail = [&](const char* what) {
    if (why) *why = what;
    return false;
  };
  if (s.repeated_tokens != e.repeated_tokens) return fail("repeated tokens");
  if (s.group_of != e.group_of) return fail("group assignment");
  if (s.anchors != e.anchors) return fail("anchors");
  if (s.s_labels != e.s_labels) return fail("s-labels");
  if (s.d_labels != e.d_labels) return fail("d-labels");
  if (s.weights.size() != e.weights.size()) return fail("weight count");
  for (std::size_t i = 0; i < e.weights.size(); ++i) {
    if (std::abs(s.weights[i] - e.weights[i]) > 1e-12) return fail("weights");
  }
  if (s.mask.size() != e.mask.size()) return fail("mask size");
  for (std::size_t q = 0; q < e.mask.size(); ++q) {
    for (std::size_t k = 0; k < e.mask.size(); ++k) {
      if (s.mask(q, k) != e.mask[q][k]) return fail("mask entry");
    }
  }
  return true;
}

// ---------------------------------------------------------------- gradients

using Var = tensor::Variable<double>;
using Tp = tensor::Tape<double>;
using ScalarFn = std::function<Var(Tp&, const std::vector<Var>&)>;

inline Var random_parameter(Rng& rng, tensor::Shape shape, double spread = 1.0) {
  tensor::Tensor<double> t(shape);
  for (auto& v : t.values()) v = rng.normal() * spread;
  return Var::parameter(std::move(t));
}

// Projects a tensor output to a scalar with fixed random coefficients so every
// output element influences the checked gradient.
inline Var project(Tp& tape, const Var& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  tensor::Tensor<double> w(out.shape());
  for (auto& v : w.values()) v = rng.uniform() * 2.0 - 1.0;
  return tensor::sum(tape, tensor::mul(tape, out, Var::constant(std::move(w))));
}

// Largest ||analytic - numeric|| / max(||analytic||, ||numeric||) over the
// inputs, with central differences of step eps.
inline double gradient_error(const ScalarFn& f, std::vector<Var> inputs, double eps = 1e-4) {
  for (auto& v : inputs) v.zero_grad();
  {
    Tp tape;
    const auto loss = f(tape, inputs);
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& input : inputs) {
    if (!input.requires_grad()) continue;
    const auto analytic = input.grad();
    std::vector<double> numeric(input.value().size());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double keep = input.value()[i];
      input.value()[i] = keep + eps;
      Tp t1(false);
      const double up = f(t1, inputs).value()[0];
      input.value()[i] = keep - eps;
      Tp t2(false);
      const double down = f(t2, inputs).value()[0];
      input.value()[i] = keep;
      numeric[i] = (up - down) / (2 * eps);
    }
    double diff = 0, na = 0, nn = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn += numeric[i] * numeric[i];
    }
    const double denom = std::max(std::sqrt(na), std::sqrt(nn));
    if (denom > 0) worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace coad::oracle
