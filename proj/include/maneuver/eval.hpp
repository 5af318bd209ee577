#pragma once

// Per-frame average precision per behavior class, text and CSV reports.

#include <algorithm>
#include <array>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "maneuver/model.hpp"

namespace maneuver::eval {

/// Non-interpolated AP: frames ranked by descending score, ties broken by
/// ascending position; mean over positives of precision at their rank.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) fail(ErrorKind::ShapeMismatch, "scores/labels length differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels[order[rank]] != 0) {
      hits += 1.0;
      sum += hits / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0.0) fail(ErrorKind::NoPositives, "no positive frames");
  return sum / hits;
}

inline double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  return average_precision(std::span<const double>(scores), std::span<const int>(labels));
}

struct EvaluationReport {
  // Percent AP per class id; index 0 (background) is never set. Empty when
  // the class has no positive frames.
  std::array<std::optional<double>, kNumClasses> per_class_ap{};
  std::optional<double> mean_ap;

  std::vector<ClassId> absent_classes() const {
    std::vector<ClassId> out;
    for (ClassId c = 1; c < kNumClasses; ++c) {
      if (!per_class_ap[static_cast<std::size_t>(c)]) out.push_back(c);
    }
    return out;
  }

  void recompute_mean() {
    double sum = 0.0;
    int n = 0;
    for (ClassId c = 1; c < kNumClasses; ++c) {
      if (const auto& v = per_class_ap[static_cast<std::size_t>(c)]) {
        sum += *v;
        ++n;
      }
    }
    mean_ap = n ? std::optional<double>(sum / n) : std::nullopt;
  }

  /// Builds a report from percent values for ids 1..11 in taxonomy order.
  static EvaluationReport from_percentages(const std::array<std::optional<double>, kNumForeground>& values) {
    EvaluationReport r;
    for (int k = 0; k < kNumForeground; ++k) {
      const auto& v = values[static_cast<std::size_t>(k)];
      if (v && (*v < 0.0 || *v > 100.0)) fail(ErrorKind::OutOfRange, "AP outside [0, 100]");
      r.per_class_ap[static_cast<std::size_t>(k + 1)] = v;
    }
    r.recompute_mean();
    return r;
  }
};

/// Scores are class probabilities over every frame of every session,
/// concatenated in session order.
inline EvaluationReport report_from_scores(const std::vector<std::array<double, kNumClasses>>& probs,
                                           const std::vector<int>& labels) {
  EvaluationReport r;
  std::vector<double> scores(probs.size());
  std::vector<int> binary(probs.size());
  for (ClassId c = 1; c < kNumClasses; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][static_cast<std::size_t>(c)];
      binary[i] = labels[i] == c ? 1 : 0;
      any = any || binary[i];
    }
    if (any) r.per_class_ap[static_cast<std::size_t>(c)] = 100.0 * average_precision(scores, binary);
  }
  r.recompute_mean();
  return r;
}

/// Monolithic eval-mode forward per session from a zero state.
inline EvaluationReport evaluate(model::Model& m, const std::vector<Session>& sessions) {
  model::check_streams(m, sessions);
  std::vector<std::array<double, kNumClasses>> probs;
  std::vector<int> labels;
  for (const auto& s : sessions) {
    const auto logits = m.forward_session(s);
    for (std::size_t t = 0; t < s.size(); ++t) {
      const auto p = nn::softmax<double>(
          std::span<const double>(logits.data() + t * kNumClasses, kNumClasses));
      std::array<double, kNumClasses> row{};
      std::copy(p.begin(), p.end(), row.begin());
      probs.push_back(row);
      labels.push_back(s.frames[t].label);
    }
  }
  return report_from_scores(probs, labels);
}

using NamedReports = std::vector<std::pair<std::string, EvaluationReport>>;

namespace detail {

inline std::string format_percent(const std::optional<double>& v) {
  if (!v) return "\xE2\x80\x94";  // em dash
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", *v);
  return buf;
}

// Display width, counting each UTF-8 code point once.
inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char ch : s) n += (ch & 0xC0) != 0x80 ? 1 : 0;
  return n;
}

inline std::string pad_left(const std::string& s, std::size_t width) {
  const auto w = display_width(s);
  return w >= width ? s : std::string(width - w, ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
  const auto w = display_width(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

}  // namespace detail

/// Aligned text table: one row per behavior in taxonomy order, then mean;
/// one column per report.
inline std::string render_table(const NamedReports& reports) {
  if (reports.empty()) fail(ErrorKind::InvalidConfig, "render_table needs at least one report");
  const std::string first = "Driver behavior class";
  std::size_t label_w = first.size();
  for (ClassId c = 1; c < kNumClasses; ++c) label_w = std::max(label_w, class_name(c).size());
  std::vector<std::size_t> widths;
  for (const auto& [name, _] : reports) widths.push_back(std::max<std::size_t>(detail::display_width(name), 6));

  std::string out = detail::pad_right(first, label_w);
  for (std::size_t k = 0; k < reports.size(); ++k) out += "  " + detail::pad_left(reports[k].first, widths[k]);
  out += "\n";
  const std::size_t rule = label_w + [&] {
    std::size_t s = 0;
    for (auto w : widths) s += w + 2;
    return s;
  }();
  out += std::string(rule, '-') + "\n";
  for (ClassId c = 1; c < kNumClasses; ++c) {
    out += detail::pad_right(std::string(class_name(c)), label_w);
    for (std::size_t k = 0; k < reports.size(); ++k) {
      out += "  " + detail::pad_left(detail::format_percent(reports[k].second.per_class_ap[static_cast<std::size_t>(c)]), widths[k]);
    }
    out += "\n";
  }
  out += std::string(rule, '-') + "\n";
  out += detail::pad_right("mean", label_w);
  for (std::size_t k = 0; k < reports.size(); ++k) {
    out += "  " + detail::pad_left(detail::format_percent(reports[k].second.mean_ap), widths[k]);
  }
  out += "\n";
  return out;
}

/// `class,variant,ap_percent` rows (absent classes leave ap_percent empty),
/// followed by one `mean` row per report.
inline std::string render_csv(const NamedReports& reports) {
  std::string out = "class,variant,ap_percent\n";
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return std::string(buf);
  };
  for (ClassId c = 1; c < kNumClasses; ++c) {
    for (const auto& [name, r] : reports) {
      out += std::string(class_name(c)) + "," + name + "," + cell(r.per_class_ap[static_cast<std::size_t>(c)]) + "\n";
    }
  }
  for (const auto& [name, r] : reports) out += "mean," + name + "," + cell(r.mean_ap) + "\n";
  return out;
}

}  // namespace maneuver::eval
