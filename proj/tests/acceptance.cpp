// Acceptance checks: one PASS/FAIL/SKIP line per criterion. Exit status is
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "metric_oracle.hpp"
#include "sample_records.hpp"
#include "sqgen/cli.hpp"
#include "sqgen/corpus.hpp"
#include "sqgen/decoding.hpp"
#include "sqgen/error.hpp"
#include "sqgen/genmetrics.hpp"
#include "sqgen/qaeval.hpp"
#include "sqgen/training.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace sqgen;
using namespace sqgen::testing;

namespace {

struct Outcome {
  enum Status { Pass, Fail, Skip } status = Pass;
  std::vector<std::string> notes;
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    if (!ok) {
      status = Fail;
      failures.push_back(what);
    }
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1

double batch_loss(const Model& m, const std::vector<PreparedExample>& batch, bool record) {
  std::size_t tokens = 0;
  for (const auto& ex : batch) tokens += ex.question_ids.size() + 1;
  double total = 0;
  for (const auto& ex : batch) {
    if (record) {
      const LossTerm t = nll_terms(m, ex);
      nn::backward(nn::scale(t.total, 1.0 / static_cast<double>(tokens)));
      total += t.total.value()[0];
    } else {
      nn::NoGradGuard ng;
      total += nll_terms(m, ex).total.value()[0];
    }
  }
  return total / static_cast<double>(tokens);
}

// Central differences with h = 1e-5. Gradients whose magnitude is below the
// finite-difference round-off level (|L| * 2^-52 / h, about 1e-10 here) cannot
// be resolved to a relative 1e-4, so both sides are compared against a floor.
constexpr double kStep = 1e-5;
constexpr double kFloor = 1e-6;
constexpr double kTolerance = 1e-4;

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t coords = 0, directions = 0, tensors = 0;
  double worst = 0;
  std::string worst_where;
  auto track = [&](double analytic, double numeric, const std::string& where) {
    const double e = relative_error(analytic, numeric, kFloor);
    if (e > worst) {
      worst = e;
      worst_where = where;
    }
    o.expect(e < kTolerance, where + " rel error " + fmt(e) + " analytic " + fmt(analytic, 10) +
                                 " numeric " + fmt(numeric, 10));
  };

  for (int b = 0; b < 3; ++b) {
    const ModelConfig c = ModelConfig::toy(24);
    Model m(c, 1000 + static_cast<std::uint64_t>(b));
    scale_parameters(m, 4.0);
    const auto batch = copy_task(2, c.vocab_size, 2000 + static_cast<std::uint64_t>(b), 6);
    m.parameters().zero_grad();
    batch_loss(m, batch, true);
    std::mt19937_64 rng(3000 + static_cast<std::uint64_t>(b));
    std::normal_distribution<double> gauss;
    auto loss = [&] { return batch_loss(m, batch, false); };

    auto& items = m.parameters().items();
    std::vector<std::vector<double>> all_dirs;
    for (auto& p : items) {
      ++tensors;
      const nn::Tensor g = p.var.grad();
      auto& values = p.var.mutable_value();
      const std::size_t n = values.size();
      const std::string tag = "batch " + std::to_string(b) + " " + p.name;

      // Individual coordinates: all of a small tensor, otherwise the largest
      // gradients plus a random sample.
      std::vector<std::size_t> picks;
      if (n <= 128) {
        for (std::size_t i = 0; i < n; ++i) picks.push_back(i);
      } else {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + 4, order.end(),
                          [&](std::size_t x, std::size_t y) { return std::abs(g[x]) > std::abs(g[y]); });
        picks.assign(order.begin(), order.begin() + 4);
        for (int k = 0; k < 4; ++k) picks.push_back(static_cast<std::size_t>(rng() % n));
      }
      for (std::size_t i : picks) {
        track(g[i], central_difference(values[i], loss, kStep), tag + "[" + std::to_string(i) + "]");
        ++coords;
      }

      // Whole tensor along a random direction.
      std::vector<double> dir(n);
      double analytic = 0;
      for (std::size_t i = 0; i < n; ++i) {
        dir[i] = gauss(rng);
        analytic += dir[i] * g[i];
      }
      const nn::Tensor saved = values;
      for (std::size_t i = 0; i < n; ++i) values[i] = saved[i] + kStep * dir[i];
      const double plus = loss();
      for (std::size_t i = 0; i < n; ++i) values[i] = saved[i] - kStep * dir[i];
      const double minus = loss();
      values = saved;
      track(analytic, (plus - minus) / (2 * kStep), tag + " direction");
      ++directions;
      all_dirs.push_back(std::move(dir));
    }

    // Every parameter at once.
    double analytic = 0;
    std::vector<nn::Tensor> saved;
    for (std::size_t k = 0; k < items.size(); ++k) {
      const nn::Tensor g = items[k].var.grad();
      saved.push_back(items[k].var.value());
      for (std::size_t i = 0; i < g.size(); ++i) analytic += all_dirs[k][i] * g[i];
    }
    auto shift = [&](double s) {
      for (std::size_t k = 0; k < items.size(); ++k) {
        auto& v = items[k].var.mutable_value();
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = saved[k][i] + s * all_dirs[k][i];
      }
    };
    shift(kStep);
    const double plus = loss();
    shift(-kStep);
    const double minus = loss();
    shift(0);
    track(analytic, (plus - minus) / (2 * kStep), "batch " + std::to_string(b) + " all parameters");
    ++directions;
  }
  const double secs = seconds_since(t0);
  o.expect(secs < 120, "runtime " + fmt(secs) + " s exceeds 2 min");
  o.note(std::to_string(tensors) + " tensors, " + std::to_string(coords) + " coordinates, " +
         std::to_string(directions) + " directions; worst rel error " + fmt(worst) + " at " + worst_where +
         "; " + fmt(secs) + " s");
  return o;
}

// ---------------------------------------------------------------- 2

ModelConfig random_config(std::mt19937_64& rng) {
  ModelConfig c;
  c.vocab_size = 6 + rng() % 35;
  c.d_model = rng() % 2 ? 8 : 16;
  const std::size_t heads[] = {1, 2, 4};
  c.n_heads = heads[rng() % 3];
  c.encoder_layers = 1 + rng() % 2;
  c.decoder_lm_layers = 1 + rng() % 2;
  c.cross_layers = 1 + rng() % 2;
  c.ffn_dim = 2 * c.d_model;
  c.max_context = 12;
  c.max_question = 6;
  c.use_pointer = rng() % 5 != 0;
  c.use_decoder_lm = rng() % 4 != 0;
  c.use_type_ids = rng() % 4 != 0;
  return c;
}

Outcome mixture_soundness() {
  Outcome o;
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> scale(1.0, 30.0);
  double worst_sum = 0;
  std::size_t rows = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ModelConfig c = random_config(rng);
    Model m(c, static_cast<std::uint64_t>(trial));
    scale_parameters(m, scale(rng));
    const auto ctx = random_ids(rng, 1 + rng() % c.max_context, c.vocab_size);
    const auto types = random_types(rng, ctx.size());
    std::vector<int> prefix{kBos};
    const auto rest = random_ids(rng, rng() % (c.max_question + 1), c.vocab_size);
    prefix.insert(prefix.end(), rest.begin(), rest.end());
    const std::string tag = "trial " + std::to_string(trial);

    const auto enc = m.encode_context(ctx, types);
    const auto out = m.decode(prefix, enc, ctx);
    for (std::size_t t = 0; t < prefix.size(); ++t) {
      double total = 0;
      bool nonneg = true;
      for (double p : out.final_dist.value().row_values(t)) {
        total += p;
        nonneg = nonneg && p >= 0.0;
      }
      worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      o.expect(std::abs(total - 1.0) <= 1e-6 && nonneg, tag + " row " + std::to_string(t) + " sums to " +
                                                            fmt(total, 17));
      ++rows;
    }

    const std::set<int> in_context(ctx.begin(), ctx.end());
    DecoderStepOutput step = m.decode_step(prefix, enc, ctx);
    DecoderStepOutput forced = step;
    forced.p_gen = 0.0;
    const auto copy_only = output_distribution(forced, ctx);
    double copy_total = 0;
    for (std::size_t w = 0; w < copy_only.size(); ++w) {
      copy_total += copy_only[w];
      if (!in_context.count(static_cast<int>(w))) {
        o.expect(copy_only[w] == 0.0, tag + " copy mass outside the context");
      }
    }
    o.expect(std::abs(copy_total - 1.0) <= 1e-6, tag + " copy distribution sums to " + fmt(copy_total, 17));
    forced.p_gen = 1.0;
    o.expect(output_distribution(forced, ctx) == step.vocab_dist, tag + " p_gen=1 differs from vocab_dist");

    if (c.use_pointer) {
      // The same endpoints reached through the model's own gate.
      for (auto& p : m.parameters().items()) {
        if (p.name == "decoder.gate.bias") p.var.mutable_value().fill(-1e4);
      }
      const auto closed = m.decode_step(prefix, enc, ctx);
      o.expect(closed.p_gen == 0.0, tag + " saturated gate is not 0");
      for (std::size_t w = 0; w < closed.final_dist.size(); ++w) {
        if (!in_context.count(static_cast<int>(w))) {
          o.expect(closed.final_dist[w] == 0.0, tag + " model copy mass outside the context");
        }
      }
      for (auto& p : m.parameters().items()) {
        if (p.name == "decoder.gate.bias") p.var.mutable_value().fill(1e4);
      }
      const auto open = m.decode_step(prefix, enc, ctx);
      o.expect(open.p_gen == 1.0 && open.final_dist == open.vocab_dist, tag + " open gate differs");
    } else {
      o.expect(step.final_dist == step.vocab_dist && step.p_gen == 1.0, tag + " pointer-free mixture");
    }
    if (o.failures.size() > 20) break;
  }
  o.note("1000 models, " + std::to_string(rows) + " rows; max |sum - 1| = " + fmt(worst_sum));
  return o;
}

// ---------------------------------------------------------------- 3

double max_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Outcome decoder_causality() {
  Outcome o;
  std::mt19937_64 rng(23);
  double worst = 0;
  for (int model_k = 0; model_k < 10; ++model_k) {
    const ModelConfig c = ModelConfig::toy(30);
    Model m(c, 500 + static_cast<std::uint64_t>(model_k));
    scale_parameters(m, 4.0);
    for (int k = 0; k < 10; ++k) {
      const auto ctx = random_ids(rng, 4 + rng() % 12, c.vocab_size);
      const auto enc = m.encode_context(ctx, random_types(rng, ctx.size()));
      std::vector<int> prefix{kBos};
      const auto rest = random_ids(rng, 1 + rng() % 10, c.vocab_size);
      prefix.insert(prefix.end(), rest.begin(), rest.end());
      const auto full = m.decode(prefix, enc, ctx);
      for (std::size_t t = 1; t <= prefix.size(); ++t) {
        const auto step = m.decode_step(std::span<const int>(prefix).first(t), enc, ctx);
        const double d = std::max({max_diff(step.final_dist, full.final_dist.value().row_values(t - 1)),
                                   max_diff(step.copy_attn, full.copy_attn.value().row_values(t - 1)),
                                   std::abs(step.p_gen - full.p_gen.value()(t - 1, 0))});
        worst = std::max(worst, d);
        o.expect(d <= 1e-9, "prefix length " + std::to_string(t) + " differs by " + fmt(d));
      }
    }
  }
  o.note("100 prefixes on 10 toy models; max deviation " + fmt(worst));
  return o;
}

// ---------------------------------------------------------------- 4

double greedy_exact_match(const Model& m, const std::vector<PreparedExample>& data) {
  std::size_t hits = 0;
  DecodeOptions opt;
  opt.max_len = m.config().max_question + 1;
  for (const auto& ex : data) {
    const PgnStepModel step(m, ex.context_ids, ex.type_ids);
    hits += strip_specials(greedy(step, opt), opt) == ex.question_ids;
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

Outcome toy_overfit() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const ModelConfig c = ModelConfig::toy(24);
  const auto data = copy_task(32, c.vocab_size, 4242);
  Model m(c, 7);
  DatasetSplit split;
  split.train = data;
  split.dev = data;  // selection and stopping use training-set perplexity
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 8;
  cfg.epochs = 300;
  cfg.seed = 11;
  std::size_t reached = 0;
  const TrainResult r = train(m, split, cfg, [&](const EpochLog& e, const Model& model) {
    if (e.dev_perplexity < 1.2 && greedy_exact_match(model, data) >= 0.9) {
      reached = e.epoch;
      return false;
    }
    return true;
  });
  const double ppl = perplexity(m, data);
  const double em = greedy_exact_match(m, data);
  const double secs = seconds_since(t0);
  o.expect(ppl < 1.2, "train perplexity " + fmt(ppl));
  o.expect(em >= 0.9, "greedy exact match " + fmt(em));
  o.expect(r.log.size() <= 300, "more than 300 epochs");
  o.expect(secs < 300, "runtime " + fmt(secs) + " s exceeds 5 min");
  o.note("epoch " + std::to_string(reached ? reached : r.log.size()) + ": perplexity " + fmt(ppl, 4) +
         ", exact match " + fmt(100 * em) + "%, " + fmt(secs) + " s");
  return o;
}

// ---------------------------------------------------------------- 5

std::vector<double> random_dist(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 2.0);
  std::vector<double> d(n);
  double total = 0;
  for (double& v : d) total += (v = std::exp(g(rng)));
  for (double& v : d) v /= total;
  return d;
}

Outcome decoding_checks() {
  Outcome o;
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelConfig c = micro_config(12);
    Model m(c, 100 + static_cast<std::uint64_t>(trial));
    scale_parameters(m, 15.0);
    const auto ctx = random_ids(rng, 6, c.vocab_size);
    const PgnStepModel step(m, ctx, random_types(rng, 6));
    BeamOptions bo;
    bo.beam = 1;
    bo.max_len = c.max_question;
    DecodeOptions go;
    go.max_len = c.max_question;
    const auto beams = beam_search(step, bo);
    const Hypothesis g = greedy(step, go);
    o.expect(!beams.empty() && beams[0].ids == g.ids, "beam=1 differs from greedy, model " + std::to_string(trial));
  }

  // Three tokens, two steps, no EOS: nine sequences.
  for (int trial = 0; trial < 50; ++trial) {
    std::map<std::vector<int>, std::vector<double>> table;
    table[{0}] = random_dist(rng, 3);
    for (int a = 0; a < 3; ++a) table[{0, a}] = random_dist(rng, 3);
    const FunctionStepModel fm([&](std::span<const int> p) { return table.at({p.begin(), p.end()}); });
    double best = -INFINITY;
    std::vector<int> arg;
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) {
        const double lp = std::log(table[{0}][a]) + std::log(table[{0, a}][b]);
        if (lp > best) {
          best = lp;
          arg = {0, a, b};
        }
      }
    }
    BeamOptions opt;
    opt.bos = 0;
    opt.eos = -1;
    opt.max_len = 2;
    opt.beam = 9;
    opt.length_normalize = false;
    const auto ranked = beam_search(fm, opt);
    o.expect(!ranked.empty() && ranked[0].ids == arg, "beam=9 misses the exhaustive argmax");
  }

  const ModelConfig c = micro_config(10);
  Model m(c, 8);
  scale_parameters(m, 6.0);
  const auto ctx = random_ids(rng, 5, c.vocab_size);
  const PgnStepModel step(m, ctx, random_types(rng, 5));
  const std::vector<int> prefix{kBos, ctx[0]};
  const auto dist = step.next(prefix);
  std::vector<double> counts(dist.size(), 0.0);
  std::mt19937_64 draw(31);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(sample_token(dist, 1.0, 1.0, draw))] += 1;
  double tv = 0;
  for (std::size_t i = 0; i < dist.size(); ++i) tv += std::abs(counts[i] / n - dist[i]) / 2;
  o.expect(tv < 0.01, "nucleus total variation " + fmt(tv));
  o.note("100 beam/greedy models, 50 exhaustive toys, nucleus TV " + fmt(tv, 2) + " over 1e5 draws");
  return o;
}

// ---------------------------------------------------------------- 6

Outcome metric_oracles() {
  Outcome o;
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& p : oracle::frozen_suite()) {
    cands.push_back(metric_tokens(p.candidate));
    auto& r = refs.emplace_back();
    for (const char* s : p.references) r.push_back(metric_tokens(s));
  }
  double worst = 0;
  for (int n = 1; n <= 4; ++n) {
    const double d = std::abs(bleu(cands, refs, static_cast<std::size_t>(n)) - oracle::corpus_bleu(cands, refs, n));
    worst = std::max(worst, d);
  }
  for (std::size_t k = 0; k < cands.size(); ++k) {
    worst = std::max(worst, std::abs(rouge_l(cands[k], refs[k]) - oracle::rouge_l(cands[k], refs[k], kRougeBeta)));
  }
  o.expect(worst < 1e-6, "oracle deviation " + fmt(worst));
  std::vector<std::vector<Tokens>> self;
  for (const auto& t : cands) self.push_back({t});
  o.expect(std::abs(bleu(cands, self, 4) - 1.0) < 1e-12, "identity BLEU-4 is not 1");
  o.expect(std::abs(bleu(cands, self, 1) - 1.0) < 1e-12, "identity BLEU-1 is not 1");
  for (const auto& t : cands) o.expect(std::abs(rouge_l(t, std::vector<Tokens>{t}) - 1.0) < 1e-12, "identity ROUGE-L");
  const std::vector<Tokens> a{metric_tokens("banana apple cherry")};
  const std::vector<std::vector<Tokens>> b{{metric_tokens("zebra yak walrus")}};
  o.expect(bleu(a, b, 1) == 0.0 && bleu(a, b, 4) == 0.0 && rouge_l(a[0], b[0]) == 0.0, "disjoint pair is not 0");
  o.note("20 frozen pairs; BLEU-4 " + fmt(bleu(cands, refs, 4), 4) + "; max oracle deviation " + fmt(worst));
  return o;
}

// ---------------------------------------------------------------- 7

Outcome qa_identities() {
  Outcome o;
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng() % 29;
    QaOutput q;
    for (auto* v : {&q.p_start, &q.p_end}) {
      v->resize(n + 1);
      double total = 0;
      for (double& x : *v) total += (x = trial % 2 ? static_cast<double>(rng() % 3) + 1e-3 : std::exp(std::normal_distribution<double>(0, 2)(rng)));
      for (double& x : *v) x /= total;
    }
    std::size_t bi = 0, bj = 0;
    double best = -1;
    for (std::size_t i = 1; i <= n; ++i) {
      for (std::size_t j = i + 1; j <= n; ++j) {
        if (q.p_start[i] * q.p_end[j] > best) {
          best = q.p_start[i] * q.p_end[j];
          bi = i;
          bj = j;
        }
      }
    }
    const SpanChoice s = best_span(q);
    o.expect(s.start == bi && s.end == bj && s.p_ans == best, "best_span differs from brute force, trial " + std::to_string(trial));
  }
  o.expect(answerability(0.37, 0.37) == 0.0, "answerability(p, p) != 0");
  for (std::size_t n = 2; n <= 30; ++n) {
    QaOutput u;
    u.p_start.assign(n + 1, 1.0 / static_cast<double>(n + 1));
    u.p_end = u.p_start;
    o.expect(std::abs(no_answer_prob(u) - 1.0 / double((n + 1) * (n + 1))) < 1e-15, "uniform p_no_ans");
  }
  const std::vector<double> x{1, 2, 3}, y{1, 2, 4}, neg{-1, -2, -3};
  o.expect(std::abs(pearson(x, x) - 1.0) < 1e-12, "pearson(x, x)");
  o.expect(std::abs(pearson(x, neg) + 1.0) < 1e-12, "pearson(x, -x)");
  // Deviations (-1, 0, 1) and (-4/3, -1/3, 5/3): covariance sum 3, squares 2 and 14/3.
  const double hand = 3.0 / std::sqrt(2.0 * 14.0 / 3.0);
  o.expect(std::abs(pearson(x, y) - hand) < 1e-9, "pearson hand case " + fmt(pearson(x, y), 12));
  o.note("1000 brute-force spans; pearson([1,2,3],[1,2,4]) = " + fmt(pearson(x, y), 12));
  return o;
}

// ---------------------------------------------------------------- 8

Outcome preprocessing_fidelity() {
  Outcome o;
  std::vector<std::string> lines;
  const std::vector<RawRecord> records{un_record(), permit_record(), jdk_record()};
  for (const auto& r : records) {
    lines.push_back(r.title);
    lines.push_back(r.context);
    lines.push_back(r.question);
  }
  const Vocab v = train_vocab(lines, 400);
  for (const auto& r : records) {
    const StrippedText s = strip_markers(bracket_answers(r));
    o.expect(s.text == r.title + " " + r.context, r.id + " marker-stripped text differs");
    const auto prepared = prepare_example(r, v);
    if (!std::holds_alternative<PreparedExample>(prepared)) {
      o.expect(false, r.id + " rejected");
      continue;
    }
    const auto& ex = std::get<PreparedExample>(prepared);
    o.expect(decode(ex.context_ids, v) == normalize_text(s.text), r.id + " context tokens differ");
    // Tagged tokens reproduce the bracketed regions.
    std::string expected_tagged;
    for (const auto& [a, b] : s.tagged) {
      expected_tagged += (expected_tagged.empty() ? "" : " ") + s.text.substr(a, b - a);
    }
    std::vector<int> tagged;
    for (std::size_t i = 0; i < ex.type_ids.size(); ++i) {
      if (ex.type_ids[i]) tagged.push_back(ex.context_ids[i]);
    }
    o.expect(decode(tagged, v) == normalize_text(expected_tagged), r.id + " tagged tokens differ");
  }
  o.expect(bracket_answers(un_record()) ==
               "President of the United Nations General Assembly [ Miroslav Lajčák of Slovakia ] has been "
               "elected as the United Nations General Assembly President of its 72nd session beginning in "
               "September 2017.",
           "bracket string");

  const std::vector<std::pair<std::string, std::string>> articles{
      {"NEW DELHI, India (CNN) -- Monsoon rains arrived early.\n\n@highlight\n\nRains arrive", "Monsoon rains arrived early."},
      {"WASHINGTON (CNN) -- The vote passed.\nIt was close.\n\n@highlight\n\nVote passes\n\n@highlight\n\nClose margin",
       "The vote passed.\nIt was close."},
      {"LONDON, England (CNN)  -- Fans queued overnight.", "Fans queued overnight."},
      {"Plain body without a dateline.\n\n@highlight\n\nNo dateline", "Plain body without a dateline."},
      {"First line.\nLater (CNN) mention stays.", "First line.\nLater (CNN) mention stays."},
  };
  for (const auto& [in, expected] : articles) {
    o.expect(strip_news_article(in) == expected, "news stripping: " + in.substr(0, 20));
  }

  const Vocab wv = word_vocab(50);
  auto kept = [](const PrepareResult& r) { return std::holds_alternative<PreparedExample>(r); };
  auto reason = [](const PrepareResult& r) {
    return std::holds_alternative<Rejected>(r) ? std::get<Rejected>(r).reason : std::string();
  };
  o.expect(kept(prepare_news(words(490), wv)), "490-token article rejected");
  o.expect(reason(prepare_news(words(491), wv)) == "too_long", "491-token article kept");
  RawRecord r;
  r.question = words(3);
  r.context = words(500);
  o.expect(kept(prepare_example(r, wv)), "500-token context rejected");
  r.context = words(501);
  o.expect(reason(prepare_example(r, wv)) == "context_too_long", "501-token context kept");
  r.context = words(10);
  r.question = words(50);
  o.expect(kept(prepare_example(r, wv)), "50-token question rejected");
  r.question = words(51);
  o.expect(reason(prepare_example(r, wv)) == "question_too_long", "51-token question kept");
  o.note("3 annotated records, 5 articles, 490/500/50 boundaries");
  return o;
}

// ---------------------------------------------------------------- 9

std::vector<RawRecord> read_raw(const std::string& path) {
  std::vector<RawRecord> out;
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line);
    RawRecord r;
    r.id = j.value("id", "");
    r.title = j.value("title", "");
    r.question = j.value("question", "");
    r.context = j.at("context").get<std::string>();
    r.starts_with_paragraph_tag = j.value("p_tag", true);
    if (j.contains("short_spans")) {
      for (const auto& s : j.at("short_spans")) r.short_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
    }
    out.push_back(std::move(r));
  }
  return out;
}

Outcome corpus_counts() {
  Outcome o;
  const char* train_path = std::getenv("SQGEN_NQ_TRAIN");
  const char* dev_path = std::getenv("SQGEN_NQ_DEV");
  if (!train_path || !dev_path) {
    o.status = Outcome::Skip;
    o.note("set SQGEN_NQ_TRAIN and SQGEN_NQ_DEV to NQ JSONL in the ingestion schema");
    return o;
  }
  const auto train_raw = read_raw(train_path);
  const auto dev_raw = read_raw(dev_path);
  Vocab vocab;
  if (const char* vp = std::getenv("SQGEN_NQ_VOCAB")) {
    vocab = Vocab::load_file(vp);
  } else {
    std::vector<std::string> lines;
    for (const auto& r : train_raw) {
      lines.push_back(r.title);
      lines.push_back(r.context);
      lines.push_back(r.question);
    }
    vocab = train_vocab(lines, 8000);
  }
  std::vector<PreparedExample> kept;
  std::set<std::string> train_titles;
  for (const auto& r : train_raw) {
    const auto p = prepare_example(r, vocab);
    if (const auto* ex = std::get_if<PreparedExample>(&p)) {
      kept.push_back(*ex);
      train_titles.insert(r.title);
    }
  }
  const DatasetSplit split = split_dataset(kept, 0.9, 0);
  std::size_t sa = 0, la = 0;
  for (const auto& r : dev_raw) {
    if (train_titles.count(r.title)) continue;
    const auto p = prepare_example(r, vocab);
    if (const auto* ex = std::get_if<PreparedExample>(&p)) (ex->answer_kind == AnswerKind::Short ? sa : la) += 1;
  }
  const DatasetStats stats = dataset_stats(kept);
  o.expect(split.train.size() == 99725, "train count " + std::to_string(split.train.size()));
  o.expect(split.dev.size() == 11140, "dev count " + std::to_string(split.dev.size()));
  o.expect(sa == 3364, "NQ-SA count " + std::to_string(sa));
  o.expect(la == 1495, "NQ-LA count " + std::to_string(la));
  o.expect(std::abs(stats.questions_per_context_mean - 1.1) <= 0.05,
           "questions per context " + fmt(stats.questions_per_context_mean));
  o.note("train " + std::to_string(split.train.size()) + ", dev " + std::to_string(split.dev.size()) + ", SA " +
         std::to_string(sa) + ", LA " + std::to_string(la));
  return o;
}

// ---------------------------------------------------------------- 10

std::map<std::string, std::string> snapshot_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream is(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    std::string text = ss.str();
    const std::string name = fs::relative(e.path(), root).string();
    // Wall-clock fields are the only permitted difference.
    if (name.size() > 5 && name.substr(name.size() - 5) == ".json" && text.find("\"wall_seconds\"") != std::string::npos) {
      auto j = nlohmann::ordered_json::parse(text);
      j.erase("wall_seconds");
      text = j.dump();
    } else if (name.find("train_log.csv") != std::string::npos) {
      std::istringstream ls(text);
      std::string line, out;
      while (std::getline(ls, line)) out += line.substr(0, line.rfind(',')) + "\n";
      text = out;
    }
    files[name] = text;
  }
  return files;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sqgen");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << "sqgen " << args[1] << " failed: " << err.str();
  return code;
}

bool run_pipeline(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "nq.jsonl") << small_nq_jsonl();
  const std::string d = dir.string() + "/";
  std::ofstream(dir / "news.jsonl")
      << nlohmann::json{{"id", "nq0"}, {"article", "PARIS (CNN) -- the old mill by the river"}, {"highlights", "old mill"}}.dump()
      << "\n";
  return cli({"vocab", "--input", d + "nq.jsonl", "--out", d + "vocab.txt", "--size", "150"}) == 0 &&
         cli({"prepare", "--input", d + "nq.jsonl", "--out", d + "prep.jsonl", "--vocab", d + "vocab.txt"}) == 0 &&
         cli({"train", "--data", d + "prep.jsonl", "--vocab", d + "vocab.txt", "--out-dir", d + "model", "--epochs",
              "2", "--seed", "9", "--lr", "1e-3", "--batch-size", "4", "--max-context", "32", "--max-question",
              "12"}) == 0 &&
         cli({"generate", "--checkpoint", d + "model/best", "--vocab", d + "vocab.txt", "--data", d + "prep.jsonl",
              "--out", d + "beam.jsonl"}) == 0 &&
         cli({"generate", "--checkpoint", d + "model/best", "--vocab", d + "vocab.txt", "--data", d + "prep.jsonl",
              "--out", d + "nucleus.jsonl", "--mode", "nucleus", "--temperature", "1.0", "--seed", "4"}) == 0 &&
         cli({"eval", "gen", "--candidates", d + "beam.jsonl", "--references", d + "prep.jsonl", "--vocab",
              d + "vocab.txt", "--out", d + "gen_report.json", "--per-example", d + "gen_rows.csv"}) == 0 &&
         cli({"eval", "qa", "--generations", "BEAM=" + d + "beam.jsonl", "--generations",
              "NUCLEUS=" + d + "nucleus.jsonl", "--contexts", d + "prep.jsonl", "--vocab", d + "vocab.txt",
              "--out-dir", d + "qa"}) == 0;
}

Outcome determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "sqgen_acceptance_determinism";
  if (!run_pipeline(dir)) {
    o.expect(false, "first pipeline run failed");
    return o;
  }
  const auto first = snapshot_tree(dir);
  if (!run_pipeline(dir)) {
    o.expect(false, "second pipeline run failed");
    return o;
  }
  const auto second = snapshot_tree(dir);
  o.expect(first.size() == second.size(), "file sets differ");
  std::size_t checkpoints = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    o.expect(it != second.end() && it->second == bytes, name + " differs");
    checkpoints += name.find(".bin") != std::string::npos;
  }
  o.note(std::to_string(first.size()) + " files (" + std::to_string(checkpoints) +
         " checkpoint blobs) identical across two runs");
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"gradient correctness", gradient_correctness},
      {"mixture soundness", mixture_soundness},
      {"decoder causality", decoder_causality},
      {"toy overfit", toy_overfit},
      {"decoding", decoding_checks},
      {"metric oracle equivalence", metric_oracles},
      {"QA-metric identities", qa_identities},
      {"preprocessing fidelity", preprocessing_fidelity},
      {"corpus counts", corpus_counts},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    const char* label = o.status == Outcome::Pass ? "PASS" : o.status == Outcome::Fail ? "FAIL" : "SKIP";
    std::cout << label << " " << (i + 1) << " " << criteria[i].name;
    for (const auto& n : o.notes) std::cout << " | " << n;
    std::cout << std::endl;
    for (std::size_t k = 0; k < std::min<std::size_t>(o.failures.size(), 10); ++k) {
      std::cout << "    " << o.failures[k] << std::endl;
    }
    failed += o.status == Outcome::Fail;
  }
  return failed == 0 ? 0 : 1;
}
