#include "despoof/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "despoof/serialize.hpp"

namespace despoof {

namespace {

struct ClassScores {
  std::vector<double> genuine, spoof;  // ascending
};

ClassScores split_sorted(const ScoreSet& set) {
  if (set.scores.size() != set.labels.size()) throw std::invalid_argument("score set: scores and labels differ in length");
  ClassScores s;
  for (std::size_t i = 0; i < set.scores.size(); ++i) {
    if (std::isnan(set.scores[i])) throw std::invalid_argument("score set: NaN score");
    (set.labels[i] == Label::genuine ? s.genuine : s.spoof).push_back(set.scores[i]);
  }
  if (s.genuine.empty() || s.spoof.empty()) throw std::invalid_argument("score set needs genuine and spoof samples");
  std::sort(s.genuine.begin(), s.genuine.end());
  std::sort(s.spoof.begin(), s.spoof.end());
  return s;
}

// Fraction of v (ascending) with value >= t.
double frac_at_or_above(const std::vector<double>& v, double t) {
  const auto it = std::lower_bound(v.begin(), v.end(), t);
  return static_cast<double>(v.end() - it) / static_cast<double>(v.size());
}

// Fraction of v (ascending) with value < t.
double frac_below(const std::vector<double>& v, double t) {
  const auto it = std::lower_bound(v.begin(), v.end(), t);
  return static_cast<double>(it - v.begin()) / static_cast<double>(v.size());
}

ErrorRates rates(const ClassScores& s, double threshold) {
  return {frac_at_or_above(s.spoof, threshold), frac_below(s.genuine, threshold)};
}

std::vector<double> candidates(const ScoreSet& set) {
  std::vector<double> u = set.scores;
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<double> out;
  out.reserve(u.size() + 1);
  out.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 1; i < u.size(); ++i) out.push_back(u[i - 1] + (u[i] - u[i - 1]) / 2);
  out.push_back(std::numeric_limits<double>::infinity());
  return out;
}

}  // namespace

ErrorRates apcer_bpcer(const ScoreSet& set, double threshold) {
  if (std::isnan(threshold)) throw std::invalid_argument("threshold is NaN");
  return rates(split_sorted(set), threshold);
}

std::vector<double> candidate_thresholds(const ScoreSet& set) {
  split_sorted(set);
  return candidates(set);
}

EerPoint eer(const ScoreSet& set) {
  const auto s = split_sorted(set);
  EerPoint best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double t : candidates(set)) {
    const auto r = rates(s, t);
    const double gap = std::abs(r.apcer - r.bpcer);
    if (gap < best_gap) {
      best_gap = gap;
      best = {(r.apcer + r.bpcer) / 2, t};
    }
  }
  return best;
}

double hter(const ScoreSet& set, double threshold) {
  const auto r = apcer_bpcer(set, threshold);
  return (r.apcer + r.bpcer) / 2;
}

std::vector<RocPoint> roc_table(const ScoreSet& set) {
  const auto s = split_sorted(set);
  std::vector<RocPoint> out;
  for (double t : candidates(set)) {
    const auto r = rates(s, t);
    out.push_back({t, r.apcer, r.bpcer});
  }
  return out;
}

MetricsReport make_report(const ScoreSet& test, double threshold) {
  MetricsReport r;
  const auto e = apcer_bpcer(test, threshold);
  r.apcer = e.apcer;
  r.bpcer = e.bpcer;
  r.acer = (e.apcer + e.bpcer) / 2;
  r.hter = r.acer;
  r.eer = eer(test).eer;
  r.threshold = threshold;
  return r;
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  os << "apcer = " << format_double(r.apcer) << '\n'
     << "bpcer = " << format_double(r.bpcer) << '\n'
     << "acer = " << format_double(r.acer) << '\n'
     << "eer = " << format_double(r.eer) << '\n'
     << "hter = " << format_double(r.hter) << '\n'
     << "threshold = " << format_double(r.threshold) << '\n';
  return os.str();
}

MetricsReport parse_report(const std::string& text) {
  MetricsReport r;
  std::istringstream is(text);
  std::string line;
  int seen = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw FormatError("bad report line '" + line + "'");
    const auto key = line.substr(0, eq);
    const double v = parse_double(line.substr(eq + 3));
    if (key == "apcer") r.apcer = v;
    else if (key == "bpcer") r.bpcer = v;
    else if (key == "acer") r.acer = v;
    else if (key == "eer") r.eer = v;
    else if (key == "hter") r.hter = v;
    else if (key == "threshold") r.threshold = v;
    else throw FormatError("unknown report key '" + key + "'");
    ++seen;
  }
  if (seen != 6) throw FormatError("report must have 6 fields");
  return r;
}

std::string report_tsv_header() { return "run\tapcer\tbpcer\tacer\teer\thter\tthreshold"; }

std::string report_tsv_row(const std::string& label, const MetricsReport& r) {
  return label + '\t' + format_double(r.apcer) + '\t' + format_double(r.bpcer) + '\t' + format_double(r.acer) + '\t' +
         format_double(r.eer) + '\t' + format_double(r.hter) + '\t' + format_double(r.threshold);
}

std::string format_roc(const std::vector<RocPoint>& roc) {
  std::string out = "threshold\tfar\tfrr\n";
  for (const auto& p : roc) {
    out += format_double(p.threshold) + '\t' + format_double(p.far) + '\t' + format_double(p.frr) + '\n';
  }
  return out;
}

}  // namespace despoof
