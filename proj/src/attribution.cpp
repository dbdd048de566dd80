// SPDX-License-Identifier: Apache-2.0
/**
 * @file   attribution.cpp
 * @brief  Saliency, Kendall tau-b (Knight's algorithm) and heatmap rendering.
 */
#include <attnrobust/attribution.hpp>
#include <attnrobust/util.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace attnrobust {

std::string_view to_string(Reduction r) {
  return r == Reduction::grad_x_input ? "grad_x_input" : "grad_l2";
}

std::optional<Reduction> parse_reduction(std::string_view s) {
  if (s == "grad_x_input")
    return Reduction::grad_x_input;
  if (s == "grad_l2")
    return Reduction::grad_l2;
  return std::nullopt;
}

namespace {

std::vector<double> saliency_of(const ModelParams &params, const Trace &tr,
                                int target, Reduction reduction) {
  const std::size_t C = params.dims().num_classes, d = params.dims().embed_dim;
  if (target < 0 || static_cast<std::size_t>(target) >= C)
    throw std::invalid_argument("target class outside the class set");
  const auto c = static_cast<std::size_t>(target);
  // d softmax_c / d logits = p_c (e_c - p)
  std::vector<double> dl(C);
  for (std::size_t k = 0; k < C; ++k)
    dl[k] = tr.probs[c] * ((k == c ? 1.0 : 0.0) - tr.probs[k]);
  ExampleGrad g;
  g.reset(params, tr, false);
  backward_example(params, tr, dl, g, {.params = false, .embedded = true});

  std::vector<double> out(tr.length);
  for (std::size_t t = 0; t < tr.length; ++t) {
    const double *gt = g.embedded.data() + t * d;
    const double *wt = tr.x.data() + t * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j)
      acc += reduction == Reduction::grad_x_input ? gt[j] * wt[j] : gt[j] * gt[j];
    out[t] = reduction == Reduction::grad_x_input ? std::abs(acc) : std::sqrt(acc);
  }
  return out;
}

int argmax(const std::vector<double> &p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

} // namespace

std::vector<SaliencyMap> gradient_importance(const ModelParams &params,
                                             const TokenBatch &batch,
                                             std::span<const int> classes,
                                             Reduction reduction) {
  if (classes.size() != batch.batch_size)
    throw std::invalid_argument("one target class per example required");
  std::vector<SaliencyMap> out(batch.batch_size);
  Trace tr;
  for (std::size_t i = 0; i < batch.batch_size; ++i) {
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), tr);
    out[i] = {saliency_of(params, tr, classes[i], reduction), classes[i], reduction};
  }
  return out;
}

std::vector<SaliencyMap> gradient_importance(const ModelParams &params,
                                             const TokenBatch &batch,
                                             int target_class, Reduction reduction) {
  const std::vector<int> classes(batch.batch_size, target_class);
  return gradient_importance(params, batch, classes, reduction);
}

std::vector<std::vector<double>> attention_importance(const ModelParams &params,
                                                      const TokenBatch &batch) {
  std::vector<std::vector<double>> out(batch.batch_size);
  Trace tr;
  for (std::size_t i = 0; i < batch.batch_size; ++i) {
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), tr);
    out[i] = tr.weights;
  }
  return out;
}

namespace {

using Count = std::int64_t;

Count tie_pairs_sorted(const std::vector<double> &sorted_keys) {
  Count ties = 0, run = 1;
  for (std::size_t i = 1; i <= sorted_keys.size(); ++i) {
    if (i < sorted_keys.size() && sorted_keys[i] == sorted_keys[i - 1]) {
      ++run;
    } else {
      ties += run * (run - 1) / 2;
      run = 1;
    }
  }
  return ties;
}

// Stable merge sort of `v`; returns the number of inversions (swaps).
Count merge_count(std::vector<double> &v, std::vector<double> &buf,
                  std::size_t lo, std::size_t hi) {
  if (hi - lo < 2)
    return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  Count swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<Count>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid)
    buf[k++] = v[i++];
  while (j < hi)
    buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo),
            buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

} // namespace

std::optional<double> kendall_tau(std::span<const double> r1,
                                  std::span<const double> r2) {
  if (r1.size() != r2.size())
    throw std::invalid_argument("kendall_tau: rankings differ in length");
  if (r1.size() < 2)
    throw std::invalid_argument("kendall_tau: need at least two items");
  const std::size_t n = r1.size();

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return r1[a] != r1[b] ? r1[a] < r1[b] : r2[a] < r2[b];
  });

  std::vector<double> xs(n), ys(n);
  for (std::size_t k = 0; k < n; ++k) {
    xs[k] = r1[idx[k]];
    ys[k] = r2[idx[k]];
  }
  const Count n0 = static_cast<Count>(n) * static_cast<Count>(n - 1) / 2;
  const Count n1 = tie_pairs_sorted(xs);

  // joint ties: runs equal in both coordinates
  Count n3 = 0, run = 1;
  for (std::size_t k = 1; k <= n; ++k) {
    if (k < n && xs[k] == xs[k - 1] && ys[k] == ys[k - 1]) {
      ++run;
    } else {
      n3 += run * (run - 1) / 2;
      run = 1;
    }
  }

  std::vector<double> buf(n);
  const Count swaps = merge_count(ys, buf, 0, n);
  const Count n2 = tie_pairs_sorted(ys);

  if (n0 == n1 || n0 == n2)
    return std::nullopt;
  const Count s = n0 - n1 - n2 + n3 - 2 * swaps;
  return static_cast<double>(s) /
         std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

AgreementSummary summarize(std::vector<AttributionReport> reports) {
  AgreementSummary s;
  std::vector<double> taus;
  std::map<int, std::vector<double>> by_class;
  for (const auto &r : reports) {
    if (!r.tau) {
      ++s.skipped;
      continue;
    }
    taus.push_back(*r.tau);
    by_class[r.predicted_class].push_back(*r.tau);
  }
  s.evaluated = taus.size();
  s.mean_tau = mean(taus);
  s.median_tau = median(taus);
  for (auto &[c, ts] : by_class)
    s.per_class[c] = {ts.size(), mean(ts)};
  s.reports = std::move(reports);
  return s;
}

AgreementSummary agreement_report(const ModelParams &params,
                                  std::span<const std::string> texts,
                                  const Vocabulary &vocab, std::size_t max_len,
                                  Reduction reduction, ExecPolicy policy) {
  std::vector<AttributionReport> reports(texts.size());
  for_each_example(texts.size(), policy, [&](std::size_t i) {
    const auto ex = encode_example(texts[i], std::nullopt, vocab, max_len);
    Trace tr;
    forward_example(params, ex.ids, ex.ids.size(), tr);
    auto &r = reports[i];
    r.predicted_class = argmax(tr.probs);
    r.attention = tr.weights;
    r.grad_importance = saliency_of(params, tr, r.predicted_class, reduction);
    auto toks = tokenize(texts[i]);
    if (toks.empty())
      toks.emplace_back(kUnkToken);
    toks.resize(ex.ids.size());
    r.tokens = std::move(toks);
    if (tr.length >= 2)
      r.tau = kendall_tau(r.attention, r.grad_importance);
  });
  return summarize(std::move(reports));
}

namespace {

std::string json_array(const std::vector<double> &xs) {
  std::string out = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i)
      out += ',';
    out += format_g17(xs[i]);
  }
  return out + "]";
}

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    case '\'': out += "&#39;"; break;
    default: out += c;
    }
  }
  return out;
}

// 255 at intensity 0, 0 at intensity 1.
int fade(double value, double max_value) {
  if (!(max_value > 0.0))
    return 255;
  const double i = std::clamp(value / max_value, 0.0, 1.0);
  return static_cast<int>(std::lround(255.0 * (1.0 - i)));
}

void heat_row(std::ostringstream &os, const char *cls,
              const std::vector<std::string> &tokens,
              const std::vector<double> &values, bool red) {
  const double mx = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  os << "<div class=\"row " << cls << "\">";
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double v = t < values.size() ? values[t] : 0.0;
    const int c = fade(v, mx);
    os << "<span style=\"background-color:rgb(";
    if (red)
      os << 255 << ',' << c << ',' << c;
    else
      os << c << ',' << c << ',' << 255;
    os << ")\" title=\"" << format_g17(v) << "\">" << html_escape(tokens[t])
       << "</span> ";
  }
  os << "</div>";
}

} // namespace

std::string to_json_line(const AttributionReport &r) {
  std::string out = "{\"tokens\":";
  out += nlohmann::json(r.tokens).dump();
  out += ",\"grad_importance\":" + json_array(r.grad_importance);
  out += ",\"attention\":" + json_array(r.attention);
  out += ",\"tau\":" + (r.tau ? format_g17(*r.tau) : std::string("null"));
  out += ",\"predicted_class\":" + std::to_string(r.predicted_class) + "}";
  return out;
}

AttributionReport report_from_json(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  AttributionReport r;
  r.tokens = j.at("tokens").get<std::vector<std::string>>();
  r.grad_importance = j.at("grad_importance").get<std::vector<double>>();
  r.attention = j.at("attention").get<std::vector<double>>();
  if (!j.at("tau").is_null())
    r.tau = j.at("tau").get<double>();
  r.predicted_class = j.at("predicted_class").get<int>();
  return r;
}

std::string render_heatmap(const AttributionReport &r) {
  std::ostringstream os;
  os << "<div class=\"example\" data-class=\"" << r.predicted_class
     << "\" data-tau=\"" << (r.tau ? format_g17(*r.tau) : "null") << "\">";
  heat_row(os, "attention", r.tokens, r.attention, true);
  heat_row(os, "gradient", r.tokens, r.grad_importance, false);
  os << "</div>";
  return os.str();
}

std::string render_heatmap_page(std::span<const AttributionReport> reports,
                                std::string_view title) {
  std::ostringstream os;
  os << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>"
     << html_escape(title) << "</title>\n<style>"
     << "body{font-family:monospace}.example{margin:0 0 1em 0}"
     << ".row span{padding:1px 2px}.row.gradient{margin-top:2px}"
     << "</style></head><body>\n<h1>" << html_escape(title) << "</h1>\n"
     << "<p>Top row: attention weight. Bottom row: gradient importance.</p>\n";
  for (const auto &r : reports)
    os << render_heatmap(r) << '\n';
  os << "</body></html>\n";
  return os.str();
}

} // namespace attnrobust
