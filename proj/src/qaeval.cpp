#include "sqgen/qaeval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sqgen/error.hpp"

namespace sqgen {

namespace {

void check_distribution(std::span<const double> p, const char* what) {
  double total = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorKind::InvalidInput, std::string(what) + " has a negative or non-finite entry");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw Error(ErrorKind::InvalidInput, std::string(what) + " does not sum to 1");
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void QaOutput::validate() const {
  if (p_start.size() != p_end.size() || p_start.empty()) {
    throw Error(ErrorKind::InvalidInput, "p_start and p_end must share a non-empty length");
  }
  check_distribution(p_start, "p_start");
  check_distribution(p_end, "p_end");
  check_distribution(type_probs, "type_probs");
}

SpanChoice best_span(const QaOutput& out) {
  const std::size_t n = out.context_length();
  if (out.p_end.size() != out.p_start.size()) {
    throw Error(ErrorKind::InvalidInput, "p_start and p_end differ in length");
  }
  if (n < 2) throw Error(ErrorKind::ContextTooShort, "span search needs at least two positions");
  // For each end j, the best start is the earliest argmax of p_start over [1, j).
  SpanChoice best{1, 2, out.p_start[1] * out.p_end[2]};
  std::size_t arg = 1;
  for (std::size_t j = 2; j <= n; ++j) {
    if (out.p_start[j - 1] > out.p_start[arg]) arg = j - 1;
    const double v = out.p_start[arg] * out.p_end[j];
    if (v > best.p_ans || (v == best.p_ans && arg < best.start)) best = {arg, j, v};
  }
  return best;
}

double no_answer_prob(const QaOutput& out) {
  if (out.p_start.empty() || out.p_end.empty()) {
    throw Error(ErrorKind::InvalidInput, "empty QA output");
  }
  return out.p_start[0] * out.p_end[0];
}

double answerability(double p_ans, double p_no_ans) {
  return std::log(std::max(p_ans, kProbabilityFloor)) - std::log(std::max(p_no_ans, kProbabilityFloor));
}

double granularity(double p_la, double p_sa) { return answerability(p_la, p_sa); }

QaScores qa_score(const QaScorer& scorer, std::span<const int> question,
                  std::span<const int> context) {
  QaOutput out;
  try {
    out = scorer.score(question, context);
    out.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ScorerError) throw;
    throw Error(ErrorKind::ScorerError, e.what());
  } catch (const std::exception& e) {
    throw Error(ErrorKind::ScorerError, e.what());
  }
  const SpanChoice span = best_span(out);
  QaScores s;
  s.span_start = span.start;
  s.span_end = span.end;
  s.p_ans = span.p_ans;
  s.p_no_ans = no_answer_prob(out);
  s.s_ans = answerability(s.p_ans, s.p_no_ans);
  s.s_gra = granularity(out.p_long(), out.p_short());
  return s;
}

// ---------------------------------------------------------------- lexical stub

QaOutput LexicalOverlapScorer::score(std::span<const int> question,
                                     std::span<const int> context) const {
  const std::size_t n = context.size();
  QaOutput out;
  out.p_start.assign(n + 1, 0.0);
  out.p_end.assign(n + 1, 0.0);

  const std::set<int> q(question.begin(), question.end());
  const std::set<int> c(context.begin(), context.end());
  std::size_t shared = 0;
  for (int t : q) shared += c.count(t);
  const std::size_t uni = q.size() + c.size() - shared;
  const double J = uni == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(uni);

  // Longest common substring, earliest in the context on ties.
  std::size_t run_start = 0, run_len = 0;
  std::vector<std::size_t> prev(question.size() + 1, 0), cur(question.size() + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t k = 1; k <= question.size(); ++k) {
      cur[k] = context[i - 1] == question[k - 1] ? prev[k - 1] + 1 : 0;
      if (cur[k] > run_len) {
        run_len = cur[k];
        run_start = i - run_len;
      }
    }
    std::swap(prev, cur);
  }

  if (J == 0.0 || run_len == 0 || n == 0) {
    out.p_start[0] = out.p_end[0] = 1.0;
    out.type_probs = {1.0, 0.0, 0.0, 0.0};
    return out;
  }
  std::size_t first = run_start + 1;
  std::size_t last = run_start + run_len;
  if (first == last && n >= 2) {
    if (last < n) {
      ++last;
    } else {
      --first;
    }
  }
  out.p_start[0] = out.p_end[0] = 1.0 - J;
  out.p_start[first] += J;
  out.p_end[last] += J;
  const double share = static_cast<double>(run_len) / static_cast<double>(n);
  out.type_probs = {1.0 - J, J * share, J * (1.0 - share), 0.0};
  return out;
}

// ---------------------------------------------------------------- statistics

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorKind::InvalidInput, "pearson inputs differ in length");
  if (x.size() < 2) throw Error(ErrorKind::InvalidInput, "pearson needs at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::DegenerateInput, "zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> zscore(std::span<const double> x) {
  if (x.empty()) throw Error(ErrorKind::InvalidInput, "zscore of an empty list");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  if (sd == 0.0) throw Error(ErrorKind::DegenerateInput, "zero variance");
  std::vector<double> out;
  out.reserve(x.size());
  for (double v : x) out.push_back((v - mean) / sd);
  return out;
}

std::optional<std::size_t> flag_index(std::string_view name) {
  for (std::size_t i = 0; i < kNumFlags; ++i) {
    if (kFlagNames[i] == name) return i;
  }
  return std::nullopt;
}

std::map<std::string, UnanimityRatio> unanimity_ratios(
    std::span<const AnnotationRecord> annotations, std::span<const std::string> flags) {
  std::map<std::string, std::vector<const AnnotationRecord*>> by_article;
  for (const auto& a : annotations) by_article[a.article_id].push_back(&a);
  for (const auto& [id, recs] : by_article) {
    if (recs.size() != 3) {
      throw Error(ErrorKind::InvalidAnnotationSet,
                  "article " + id + " has " + std::to_string(recs.size()) + " annotations");
    }
  }
  std::map<std::string, UnanimityRatio> out;
  for (const auto& flag : flags) {
    const auto idx = flag_index(flag);
    if (!idx) throw Error(ErrorKind::InvalidInput, "unknown flag " + flag);
    std::size_t t = 0, f = 0;
    for (const auto& [id, recs] : by_article) {
      const std::size_t yes = static_cast<std::size_t>(
          std::count_if(recs.begin(), recs.end(), [&](const auto* r) { return r->flags[*idx]; }));
      if (yes == 3) ++t;
      if (yes == 0) ++f;
    }
    UnanimityRatio r;
    r.unanimous = t + f;
    if (r.unanimous > 0) {
      r.true_pct = 100.0 * static_cast<double>(t) / static_cast<double>(r.unanimous);
      r.false_pct = 100.0 * static_cast<double>(f) / static_cast<double>(r.unanimous);
    }
    out[flag] = r;
  }
  return out;
}

CorrelationTable correlate_annotations(std::span<const AnnotationRecord> annotations,
                                       const std::map<std::string, ArticleScores>& scores) {
  if (scores.empty()) throw Error(ErrorKind::InvalidInput, "no article scores");
  std::vector<double> s_ans, s_gra;
  for (const auto& [id, s] : scores) {
    s_ans.push_back(s.s_ans);
    s_gra.push_back(s.s_gra);
  }
  // Degenerate score columns leave their row of the table empty.
  auto normalized = [](const std::vector<double>& v) -> std::optional<std::vector<double>> {
    try {
      return zscore(v);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateInput) throw;
      return std::nullopt;
    }
  };
  const auto z_ans = normalized(s_ans);
  const auto z_gra = normalized(s_gra);
  std::map<std::string, std::size_t> article_index;
  for (const auto& [id, s] : scores) article_index.emplace(id, article_index.size());

  CorrelationTable table;
  for (std::size_t f = 0; f < kNumFlags; ++f) {
    std::vector<double> flag_values, x_ans, x_gra;
    for (const auto& a : annotations) {
      const auto it = article_index.find(a.article_id);
      if (it == article_index.end()) {
        throw Error(ErrorKind::InvalidInput, "no scores for article " + a.article_id);
      }
      flag_values.push_back(a.flags[f] ? 1.0 : 0.0);
      if (z_ans) x_ans.push_back((*z_ans)[it->second]);
      if (z_gra) x_gra.push_back((*z_gra)[it->second]);
    }
    auto corr = [&](const std::vector<double>& x, bool present) -> std::optional<double> {
      if (!present) return std::nullopt;
      try {
        return pearson(x, flag_values);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::DegenerateInput || e.kind() == ErrorKind::InvalidInput) {
          return std::nullopt;
        }
        throw;
      }
    };
    auto& row = table[std::string(kFlagNames[f])];
    row["s_ans"] = corr(x_ans, z_ans.has_value());
    row["s_gra"] = corr(x_gra, z_gra.has_value());
  }
  return table;
}

std::string correlation_json(const CorrelationTable& table) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [flag, row] : table) {
    auto& r = j[flag];
    for (const auto& [score, value] : row) {
      if (value) {
        r[score] = *value;
      } else {
        r[score] = nullptr;
      }
    }
  }
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------- reports

std::string scatter_csv(std::span<const ScatterRow> rows) {
  std::ostringstream os;
  os << "id,s_ans,s_gra,model_tag\n";
  for (const auto& r : rows) {
    os << r.id << ',' << format_double(r.s_ans) << ',' << format_double(r.s_gra) << ','
       << r.model_tag << '\n';
  }
  return os.str();
}

namespace {

struct TagMeans {
  std::string tag;
  std::size_t n = 0;
  double s_ans = 0.0;
  double s_gra = 0.0;
};

std::vector<TagMeans> tag_means(std::span<const ScatterRow> rows) {
  std::vector<TagMeans> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& m) { return m.tag == r.model_tag; });
    if (it == out.end()) it = out.insert(out.end(), TagMeans{r.model_tag});
    ++it->n;
    it->s_ans += r.s_ans;
    it->s_gra += r.s_gra;
  }
  for (auto& m : out) {
    m.s_ans /= static_cast<double>(m.n);
    m.s_gra /= static_cast<double>(m.n);
  }
  return out;
}

}  // namespace

std::string score_means_csv(std::span<const ScatterRow> rows) {
  std::ostringstream os;
  os << "model_tag,n,mean_s_ans,mean_s_gra\n";
  for (const auto& m : tag_means(rows)) {
    os << m.tag << ',' << m.n << ',' << format_double(m.s_ans) << ',' << format_double(m.s_gra)
       << '\n';
  }
  return os.str();
}

std::string scatter_svg(std::span<const ScatterRow> rows) {
  constexpr double kW = 480, kH = 360, kPad = 40;
  static constexpr const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                             "#9467bd", "#8c564b"};
  double x0 = -1, x1 = 1, y0 = -1, y1 = 1;
  for (const auto& r : rows) {
    x0 = std::min(x0, r.s_ans);
    x1 = std::max(x1, r.s_ans);
    y0 = std::min(y0, r.s_gra);
    y1 = std::max(y1, r.s_gra);
  }
  auto px = [&](double x) { return kPad + (x - x0) / (x1 - x0) * (kW - 2 * kPad); };
  auto py = [&](double y) { return kH - kPad - (y - y0) / (y1 - y0) * (kH - 2 * kPad); };

  std::vector<std::string> tags;
  for (const auto& m : tag_means(rows)) tags.push_back(m.tag);

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << px(0) << "\" y1=\"" << kPad << "\" x2=\"" << px(0) << "\" y2=\""
     << kH - kPad << "\" stroke=\"#999\"/>\n";
  os << "<line x1=\"" << kPad << "\" y1=\"" << py(0) << "\" x2=\"" << kW - kPad << "\" y2=\""
     << py(0) << "\" stroke=\"#999\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 8 << "\" text-anchor=\"middle\">s_ans</text>\n";
  os << "<text x=\"12\" y=\"" << kH / 2 << "\" transform=\"rotate(-90 12 " << kH / 2
     << ")\" text-anchor=\"middle\">s_gra</text>\n";
  for (const auto& r : rows) {
    const auto k = static_cast<std::size_t>(std::find(tags.begin(), tags.end(), r.model_tag) -
                                            tags.begin());
    os << "<circle cx=\"" << px(r.s_ans) << "\" cy=\"" << py(r.s_gra) << "\" r=\"3\" fill=\""
       << kColours[k % std::size(kColours)] << "\" fill-opacity=\"0.6\"/>\n";
  }
  for (std::size_t k = 0; k < tags.size(); ++k) {
    os << "<text x=\"" << kW - kPad << "\" y=\"" << kPad + 14.0 * static_cast<double>(k)
       << "\" text-anchor=\"end\" fill=\"" << kColours[k % std::size(kColours)] << "\">"
       << tags[k] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace sqgen
