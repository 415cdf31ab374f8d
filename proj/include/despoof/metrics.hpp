#pragma once

#include <string>
#include <vector>

#include "despoof/corpus.hpp"

namespace despoof {

/// Scores are "higher = more genuine"; labels run parallel to them.
struct ScoreSet {
  std::vector<double> scores;
  std::vector<Label> labels;

  void add(double score, Label label) {
    scores.push_back(score);
    labels.push_back(label);
  }
  std::size_t size() const noexcept { return scores.size(); }
};

struct ErrorRates {
  double apcer = 0;  // spoofs accepted: score >= threshold
  double bpcer = 0;  // genuine rejected: score < threshold
};

/// Tie rule: a score exactly at the threshold is accepted.
/// Throws if either class is empty or the set is malformed.
ErrorRates apcer_bpcer(const ScoreSet& set, double threshold);

struct EerPoint {
  double eer = 0;
  double threshold = 0;
};

/// Candidate thresholds are -inf, the midpoints between adjacent distinct
/// scores, and +inf. Picks the one minimising |FAR - FRR| (lowest threshold on
/// ties) and reports (FAR + FRR) / 2 there.
EerPoint eer(const ScoreSet& set);

/// (FAR + FRR) / 2 at a fixed threshold.
double hter(const ScoreSet& set, double threshold);

/// The candidate thresholds eer() sweeps, ascending.
std::vector<double> candidate_thresholds(const ScoreSet& set);

struct RocPoint {
  double threshold, far, frr;
};
std::vector<RocPoint> roc_table(const ScoreSet& set);

struct MetricsReport {
  double apcer = 0, bpcer = 0, acer = 0, eer = 0, hter = 0;
  double threshold = 0;  // the threshold apcer, bpcer and hter were taken at
};

/// Rates on `test` at `threshold` (normally the EER point of a development
/// set); eer is the test set's own.
MetricsReport make_report(const ScoreSet& test, double threshold);

/// `key = value` lines in a fixed order.
std::string format_report(const MetricsReport& r);
MetricsReport parse_report(const std::string& text);
std::string report_tsv_header();
std::string report_tsv_row(const std::string& label, const MetricsReport& r);
/// threshold, far, frr with a header line.
std::string format_roc(const std::vector<RocPoint>& roc);

}  // namespace despoof
