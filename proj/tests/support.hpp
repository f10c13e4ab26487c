#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sqgen/corpus.hpp"
#include "sqgen/error.hpp"
#include "sqgen/model.hpp"
#include "sqgen/textproc.hpp"

namespace sqgen::testing {

// Word k is the single code point U+0100 + k, so it encodes to exactly one
// token without any merges.
inline std::string word_text(std::size_t k) {
  const auto cp = static_cast<unsigned>(0x100 + k);
  std::string s;
  if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
  } else {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
  }
  s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  return s;
}

// Specials plus word k at id 4 + k.
inline Vocab word_vocab(std::size_t n_words) {
  Vocab v;
  for (std::size_t k = 0; k < n_words; ++k) v.add_token(std::string(kWordMarker) + word_text(k));
  return v;
}

// n space-separated words cycling through the first 50.
inline std::string words(std::size_t n, std::size_t offset = 0) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += word_text((i + offset) % 50);
  }
  return s;
}

// Copy task: the question is the tagged contiguous run of the context.
inline std::vector<PreparedExample> copy_task(std::size_t n, std::size_t vocab_size,
                                              std::uint64_t seed, std::size_t context_len = 8) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  };
  std::vector<PreparedExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    PreparedExample ex;
    ex.id = "copy" + std::to_string(i);
    for (std::size_t t = 0; t < context_len; ++t) {
      ex.context_ids.push_back(static_cast<int>(pick(kNumSpecials, vocab_size - 1)));
    }
    const std::size_t len = pick(2, 3);
    const std::size_t start = pick(0, context_len - len);
    ex.type_ids.assign(context_len, 0);
    for (std::size_t t = start; t < start + len; ++t) {
      ex.type_ids[t] = 1;
      ex.question_ids.push_back(ex.context_ids[t]);
    }
    ex.answer_kind = AnswerKind::Short;
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<int> random_ids(std::mt19937_64& rng, std::size_t n, std::size_t vocab_size) {
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(kNumSpecials + rng() % (vocab_size - kNumSpecials));
  return ids;
}

inline std::vector<int> random_types(std::mt19937_64& rng, std::size_t n) {
  std::vector<int> t(n);
  for (auto& x : t) x = static_cast<int>(rng() % 2);
  return t;
}

// A tiny configuration for exhaustive property checks.
inline ModelConfig micro_config(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 8;
  c.n_heads = 2;
  c.encoder_layers = 1;
  c.decoder_lm_layers = 1;
  c.cross_layers = 1;
  c.ffn_dim = 16;
  c.max_context = 16;
  c.max_question = 8;
  return c;
}

// Initial weights are small; scale them so random models make sharp,
// input-dependent predictions.
inline void scale_parameters(Model& model, double factor) {
  for (auto& p : model.parameters().items()) {
    if (p.name.find("norm") != std::string::npos) continue;
    for (double& v : p.var.mutable_value().values()) v *= factor;
  }
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}


// Kind of the sqgen::Error thrown by f, or nothing when f returns normally.
inline std::optional<ErrorKind> error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

// |a - n| relative to the larger magnitude; entries where both are below
// `floor` are compared against the floor instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of `loss` with respect to one scalar slot.
template <class F>
double central_difference(double& slot, F&& loss, double h = 1e-5) {
  const double original = slot;
  slot = original + h;
  const double plus = loss();
  slot = original - h;
  const double minus = loss();
  slot = original;
  return (plus - minus) / (2.0 * h);
}

}  // namespace sqgen::testing
