#include "cetal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "cetal/errors.hpp"
#include "json.hpp"

using nlohmann::json;

namespace cetal {

std::vector<double> default_tiou_thresholds() { return {0.3, 0.4, 0.5, 0.6, 0.7}; }

namespace {

struct ScoredHit {
  double score;
  bool tp;
};

// Greedy score-order matching of one class within one sequence. gts must all
// carry the class under evaluation; appends (score, matched) pairs to hits.
void match_sequence(std::vector<Segment> preds, const std::vector<Segment>& gts,
                    double threshold, std::vector<ScoredHit>& hits) {
  std::stable_sort(preds.begin(), preds.end(),
                   [](const Segment& a, const Segment& b) { return a.score > b.score; });
  std::vector<bool> used(gts.size(), false);
  for (const auto& p : preds) {
    std::size_t best = gts.size();
    double best_ov = 0.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g]) continue;
      double ov = tiou(p, gts[g]);
      if (ov < threshold) continue;
      if (best == gts.size() || ov > best_ov ||
          (ov == best_ov && gts[g].start < gts[best].start)) {
        best = g;
        best_ov = ov;
      }
    }
    if (best < gts.size()) {
      used[best] = true;
      hits.push_back({p.score, true});
    } else {
      hits.push_back({p.score, false});
    }
  }
}

// all-point interpolated area under the precision-recall staircase
double ap_from_hits(std::vector<ScoredHit> hits, std::size_t num_gt) {
  if (num_gt == 0) return 0.0;
  if (hits.empty()) return 0.0;
  std::stable_sort(hits.begin(), hits.end(),
                   [](const ScoredHit& a, const ScoredHit& b) { return a.score > b.score; });
  std::vector<double> precision(hits.size()), recall(hits.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    if (hits[k].tp) ++tp;
    precision[k] = double(tp) / double(k + 1);
    recall[k] = double(tp) / double(num_gt);
  }
  // suffix max turns the curve into its monotone envelope
  for (std::size_t k = hits.size() - 1; k > 0; --k) {
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  }
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    ap += (recall[k] - prev_r) * precision[k];
    prev_r = recall[k];
  }
  return ap;
}

std::vector<Segment> filter_class(const std::vector<Segment>& v, int label) {
  std::vector<Segment> out;
  for (const auto& s : v) {
    if (s.label == label) out.push_back(s);
  }
  return out;
}

}  // namespace

double average_precision(std::vector<Segment> preds, const std::vector<Segment>& gts,
                         double threshold) {
  std::vector<ScoredHit> hits;
  match_sequence(std::move(preds), gts, threshold, hits);
  return ap_from_hits(std::move(hits), gts.size());
}

EvalReport evaluate(const std::vector<std::vector<Segment>>& preds,
                    const std::vector<std::vector<Segment>>& gts,
                    std::size_t num_classes, const std::vector<double>& thresholds,
                    double confusion_tiou) {
  if (preds.size() != gts.size()) {
    throw ConfigError("evaluate: prediction/ground-truth sequence counts differ");
  }
  if (thresholds.empty()) throw ConfigError("evaluate: empty threshold grid");

  EvalReport rep;
  rep.thresholds = thresholds;
  rep.confusion_tiou = confusion_tiou;
  rep.gt_count.assign(num_classes, 0);
  rep.pred_count.assign(num_classes, 0);
  for (const auto& seq : gts) {
    for (const auto& g : seq) {
      if (g.label < 0 || std::size_t(g.label) >= num_classes) {
        throw DataError("evaluate: GT label out of range");
      }
      ++rep.gt_count[std::size_t(g.label)];
    }
  }
  for (const auto& seq : preds) {
    for (const auto& p : seq) {
      if (p.label < 0 || std::size_t(p.label) >= num_classes) {
        throw DataError("evaluate: prediction label out of range");
      }
      ++rep.pred_count[std::size_t(p.label)];
    }
  }
  std::size_t total_gt = 0;
  for (std::size_t n : rep.gt_count) total_gt += n;
  if (total_gt == 0) throw DataError("evaluate: dataset has no ground truth");

  rep.ap.assign(num_classes, std::vector<double>(thresholds.size(), -1.0));
  rep.map_per_threshold.assign(thresholds.size(), 0.0);
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    double sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (rep.gt_count[c] == 0) continue;
      std::vector<ScoredHit> hits;
      for (std::size_t s = 0; s < gts.size(); ++s) {
        match_sequence(filter_class(preds[s], int(c)), filter_class(gts[s], int(c)),
                       thresholds[ti], hits);
      }
      double ap = ap_from_hits(std::move(hits), rep.gt_count[c]);
      rep.ap[c][ti] = ap;
      sum += ap;
      ++scored;
    }
    rep.map_per_threshold[ti] = sum / double(scored);
  }
  rep.avg_map = 0.0;
  for (double m : rep.map_per_threshold) rep.avg_map += m;
  rep.avg_map /= double(thresholds.size());

  rep.confusion = confusion_matrix(preds, gts, num_classes, confusion_tiou);
  return rep;
}

std::vector<std::vector<std::size_t>> confusion_matrix(
    const std::vector<std::vector<Segment>>& preds,
    const std::vector<std::vector<Segment>>& gts, std::size_t num_classes,
    double tiou_threshold) {
  if (tiou_threshold < 0 || tiou_threshold > 1) {
    throw ConfigError("confusion_matrix: threshold must lie in [0,1]");
  }
  const std::size_t bg = num_classes;
  std::vector<std::vector<std::size_t>> m(num_classes + 1,
                                          std::vector<std::size_t>(num_classes + 1, 0));
  for (std::size_t s = 0; s < gts.size(); ++s) {
    const auto& p = s < preds.size() ? preds[s] : std::vector<Segment>{};
    for (const auto& g : gts[s]) {
      double best_ov = 0.0;
      int best_label = -1;
      for (const auto& q : p) {
        double ov = tiou(g, q);
        if (ov < tiou_threshold) continue;
        if (best_label < 0 || ov > best_ov) {
          best_ov = ov;
          best_label = q.label;
        }
      }
      std::size_t col = best_label < 0 ? bg : std::size_t(best_label);
      ++m[std::size_t(g.label)][col];
    }
    // predictions touching no GT at the threshold are background-row hits
    for (const auto& q : p) {
      bool hit = false;
      for (const auto& g : gts[s]) {
        if (tiou(g, q) >= tiou_threshold) {
          hit = true;
          break;
        }
      }
      if (!hit) ++m[bg][std::size_t(q.label)];
    }
  }
  return m;
}

std::string EvalReport::to_json() const {
  json j;
  j["thresholds"] = thresholds;
  j["ap"] = ap;
  j["map_per_threshold"] = map_per_threshold;
  j["avg_map"] = avg_map;
  j["confusion"] = confusion;
  j["confusion_tiou"] = confusion_tiou;
  j["gt_count"] = gt_count;
  j["pred_count"] = pred_count;
  return j.dump(2);
}

std::string EvalReport::confusion_csv() const {
  std::ostringstream os;
  const std::size_t n = confusion.size();
  os << "gt\\pred";
  for (std::size_t c = 0; c < n; ++c) {
    os << "," << (c + 1 == n ? std::string("background") : std::to_string(c));
  }
  os << "\n";
  for (std::size_t r = 0; r < n; ++r) {
    os << (r + 1 == n ? std::string("background") : std::to_string(r));
    for (std::size_t c = 0; c < n; ++c) os << "," << confusion[r][c];
    os << "\n";
  }
  return os.str();
}

std::string EvalReport::confusion_svg() const {
  const std::size_t n = confusion.size();
  const int cell = 28, margin = 40;
  const int size = margin + int(n) * cell + 10;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size
     << "\" height=\"" << size << "\">\n";
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t row_sum = 0;
    for (std::size_t c = 0; c < n; ++c) row_sum += confusion[r][c];
    for (std::size_t c = 0; c < n; ++c) {
      double frac = row_sum ? double(confusion[r][c]) / double(row_sum) : 0.0;
      int shade = int(std::lround(255.0 * (1.0 - frac)));
      os << "  <rect x=\"" << margin + int(c) * cell << "\" y=\""
         << margin + int(r) * cell << "\" width=\"" << cell << "\" height=\""
         << cell << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" "
         << "stroke=\"#999\"/>\n";
      if (confusion[r][c]) {
        os << "  <text x=\"" << margin + int(c) * cell + cell / 2 << "\" y=\""
           << margin + int(r) * cell + cell / 2 + 4
           << "\" font-size=\"10\" text-anchor=\"middle\">" << confusion[r][c]
           << "</text>\n";
      }
    }
  }
  auto label = [&](std::size_t i) {
    return i + 1 == n ? std::string("bg") : std::to_string(i);
  };
  for (std::size_t i = 0; i < n; ++i) {
    os << "  <text x=\"" << margin + int(i) * cell + cell / 2 << "\" y=\""
       << margin - 8 << "\" font-size=\"10\" text-anchor=\"middle\">" << label(i)
       << "</text>\n";
    os << "  <text x=\"" << margin - 8 << "\" y=\""
       << margin + int(i) * cell + cell / 2 + 4
       << "\" font-size=\"10\" text-anchor=\"end\">" << label(i) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string EvalReport::map_chart_svg() const {
  const int w = 420, h = 280, ml = 50, mb = 40, mt = 20, mr = 20;
  const double pw = w - ml - mr, ph = h - mt - mb;
  double x0 = thresholds.front(), x1 = thresholds.back();
  if (x1 <= x0) x1 = x0 + 1.0;
  auto px = [&](double x) { return ml + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return mt + (1.0 - y) * ph; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
     << "\" height=\"" << h << "\">\n";
  os << "  <line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw
     << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  os << "  <line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << mt + ph << "\" stroke=\"black\"/>\n";
  os << "  <polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    os << px(thresholds[i]) << "," << py(map_per_threshold[i]) << " ";
  }
  os << "\"/>\n";
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    os << "  <circle cx=\"" << px(thresholds[i]) << "\" cy=\""
       << py(map_per_threshold[i]) << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
    os << "  <text x=\"" << px(thresholds[i]) << "\" y=\"" << mt + ph + 16
       << "\" font-size=\"10\" text-anchor=\"middle\">" << thresholds[i]
       << "</text>\n";
  }
  for (double y : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    os << "  <text x=\"" << ml - 6 << "\" y=\"" << py(y) + 4
       << "\" font-size=\"10\" text-anchor=\"end\">" << y << "</text>\n";
  }
  os << "  <text x=\"" << ml + pw / 2 << "\" y=\"" << h - 6
     << "\" font-size=\"11\" text-anchor=\"middle\">tIoU threshold</text>\n";
  os << "  <text x=\"14\" y=\"" << mt + ph / 2
     << "\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << mt + ph / 2 << ")\">mAP</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace cetal
