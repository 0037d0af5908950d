#include <algorithm>
#include <cmath>
#include <random>

#include "cetal/errors.hpp"
#include "cetal/eval.hpp"
#include "doctest.h"

using namespace cetal;

namespace {

// Independent AP oracle: naive overlap arithmetic, selection-sorted scores,
// explicit greedy match, and AP as recall steps times suffix-max precision.
double oracle_overlap(const Segment& a, const Segment& b) {
  double lo = a.start > b.start ? a.start : b.start;
  double hi = a.end < b.end ? a.end : b.end;
  if (hi <= lo) return 0.0;
  double span = (a.end - a.start) + (b.end - b.start) - (hi - lo);
  return (hi - lo) / span;
}

double oracle_ap(std::vector<Segment> preds, const std::vector<Segment>& gts,
                 double thr) {
  if (gts.empty() || preds.empty()) return 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::size_t m = i;
    for (std::size_t j = i + 1; j < preds.size(); ++j) {
      if (preds[j].score > preds[m].score) m = j;
    }
    std::swap(preds[i], preds[m]);
  }
  std::vector<bool> taken(gts.size(), false);
  std::vector<bool> tp(preds.size(), false);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    int best = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      double ov = oracle_overlap(preds[i], gts[g]);
      if (ov < thr) continue;
      if (best < 0 || ov > oracle_overlap(preds[i], gts[std::size_t(best)]) ||
          (ov == oracle_overlap(preds[i], gts[std::size_t(best)]) &&
           gts[g].start < gts[std::size_t(best)].start)) {
        best = int(g);
      }
    }
    if (best >= 0) {
      taken[std::size_t(best)] = true;
      tp[i] = true;
    }
  }
  double ap = 0.0;
  std::size_t cum_tp = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!tp[i]) continue;
    ++cum_tp;
    double best_prec = 0.0;
    std::size_t t2 = 0;
    for (std::size_t j = 0; j < preds.size(); ++j) {
      if (tp[j]) ++t2;
      if (j + 1 >= cum_tp + 0 && t2 >= cum_tp) {
        double prec = double(t2) / double(j + 1);
        if (prec > best_prec) best_prec = prec;
      }
    }
    ap += best_prec / double(gts.size());
  }
  return ap;
}

Segment seg(double s, double e, int label, double score) { return {s, e, label, score}; }

}  // namespace

TEST_CASE("tiou closed forms") {
  CHECK(tiou(seg(0, 2, 0, 1), seg(0, 2, 0, 1)) == 1.0);
  CHECK(tiou(seg(0, 1, 0, 1), seg(2, 3, 0, 1)) == 0.0);
  CHECK(tiou(seg(0, 2, 0, 1), seg(1, 3, 0, 1)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // symmetry and bounds on random pairs
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int i = 0; i < 50; ++i) {
    double a0 = u(rng), b0 = u(rng);
    Segment a = seg(a0, a0 + 0.1 + u(rng), 0, 1), b = seg(b0, b0 + 0.1 + u(rng), 0, 1);
    double ab = tiou(a, b);
    CHECK(ab == tiou(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
  }
}

TEST_CASE("default threshold grid is 0.3 to 0.7 in 5 steps") {
  std::vector<double> want = {0.3, 0.4, 0.5, 0.6, 0.7};
  CHECK(default_tiou_thresholds() == want);
}

TEST_CASE("average precision closed forms") {
  std::vector<Segment> gts = {seg(1.0, 2.0, 0, 1.0)};
  CHECK(average_precision({seg(1.0, 2.0, 0, 0.8)}, gts, 0.5) == 1.0);

  // hand-walked PR curve: FP at 0.95, TP at 0.9 -> points (0,0),(1,0.5) -> 0.5
  std::vector<Segment> preds = {seg(1.0, 2.0, 0, 0.9), seg(5.0, 6.0, 0, 0.95)};
  CHECK(average_precision(preds, gts, 0.5) == doctest::Approx(0.5).epsilon(1e-12));

  CHECK(average_precision(preds, {}, 0.5) == 0.0);
  CHECK(average_precision({}, gts, 0.5) == 0.0);
}

TEST_CASE("average precision equals the brute-force oracle on 200 random instances") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t np = rng() % 7, ng = rng() % 5;
    std::vector<Segment> preds, gts;
    for (std::size_t i = 0; i < np; ++i) {
      double s = 4.0 * u(rng);
      preds.push_back(seg(s, s + 0.2 + 1.5 * u(rng), 0, 0.01 + 0.98 * u(rng)));
    }
    for (std::size_t g = 0; g < ng; ++g) {
      double s = 4.0 * u(rng);
      gts.push_back(seg(s, s + 0.2 + 1.5 * u(rng), 0, 1.0));
    }
    double thr = 0.1 + 0.6 * u(rng);
    double fast = average_precision(preds, gts, thr);
    double slow = oracle_ap(preds, gts, thr);
    CHECK(std::fabs(fast - slow) < 1e-9);
  }
}

TEST_CASE("AP is non-increasing in the threshold") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Segment> preds, gts;
    for (int i = 0; i < 5; ++i) {
      double s = 3.0 * u(rng);
      preds.push_back(seg(s, s + 0.3 + u(rng), 0, u(rng)));
      s = 3.0 * u(rng);
      gts.push_back(seg(s, s + 0.3 + u(rng), 0, 1.0));
    }
    double prev = 2.0;
    for (double thr : {0.1, 0.3, 0.5, 0.7, 0.9}) {
      double ap = average_precision(preds, gts, thr);
      CHECK(ap <= prev + 1e-12);
      prev = ap;
    }
  }
}

TEST_CASE("evaluate on perfect and empty predictions") {
  std::vector<std::vector<Segment>> gts = {
      {seg(0.5, 1.5, 0, 1), seg(2.0, 3.0, 1, 1)}, {seg(0.2, 0.9, 1, 1)}};
  EvalReport perfect = evaluate(gts, gts, 2);
  CHECK(perfect.avg_map == doctest::Approx(1.0));
  for (double m : perfect.map_per_threshold) CHECK(m == doctest::Approx(1.0));
  // identity structure off the background row
  CHECK(perfect.confusion[0][0] == 1);
  CHECK(perfect.confusion[1][1] == 2);
  CHECK(perfect.confusion[0][1] == 0);
  CHECK(perfect.confusion[2][0] == 0);

  std::vector<std::vector<Segment>> none = {{}, {}};
  EvalReport empty = evaluate(none, gts, 2);
  CHECK(empty.avg_map == 0.0);
  // all GT mass in the background column
  CHECK(empty.confusion[0][2] == 1);
  CHECK(empty.confusion[1][2] == 2);

  CHECK_THROWS_AS(evaluate(none, none, 2), DataError);
}

TEST_CASE("evaluate is invariant to prediction order") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<Segment>> gts(2), preds(2);
  for (int s = 0; s < 2; ++s) {
    for (int i = 0; i < 4; ++i) {
      double a = 3.0 * u(rng);
      gts[std::size_t(s)].push_back(seg(a, a + 0.5, i % 2, 1.0));
      a = 3.0 * u(rng);
      preds[std::size_t(s)].push_back(seg(a, a + 0.5, i % 2, 0.1 + 0.8 * u(rng)));
    }
  }
  EvalReport r1 = evaluate(preds, gts, 2);
  auto shuffled = preds;
  for (auto& v : shuffled) std::reverse(v.begin(), v.end());
  EvalReport r2 = evaluate(shuffled, gts, 2);
  CHECK(r1.avg_map == doctest::Approx(r2.avg_map).epsilon(1e-15));
  for (std::size_t t = 0; t < r1.map_per_threshold.size(); ++t) {
    CHECK(r1.map_per_threshold[t] == doctest::Approx(r2.map_per_threshold[t]));
  }
}

TEST_CASE("evaluate matches an oracle composition on a two-class fixture") {
  std::vector<std::vector<Segment>> gts = {
      {seg(0.0, 1.0, 0, 1), seg(2.0, 3.0, 1, 1)},
      {seg(1.0, 2.0, 0, 1)}};
  std::vector<std::vector<Segment>> preds = {
      {seg(0.1, 1.1, 0, 0.9), seg(2.0, 2.5, 1, 0.7), seg(4.0, 5.0, 0, 0.6)},
      {seg(0.9, 2.1, 0, 0.8)}};
  std::vector<double> thr = {0.3, 0.5};
  EvalReport rep = evaluate(preds, gts, 2, thr);
  for (std::size_t ti = 0; ti < thr.size(); ++ti) {
    // class 0 spans two sequences; oracle on the pooled hits must agree, and
    // pooling here is safe because every prediction overlaps GT only in its
    // own sequence's time range after offsetting
    std::vector<Segment> p0, g0;
    double off = 0.0;
    for (std::size_t s = 0; s < 2; ++s) {
      for (auto q : preds[s]) {
        if (q.label == 0) {
          q.start += off;
          q.end += off;
          p0.push_back(q);
        }
      }
      for (auto g : gts[s]) {
        if (g.label == 0) {
          g.start += off;
          g.end += off;
          g0.push_back(g);
        }
      }
      off += 100.0;
    }
    double ap0 = oracle_ap(p0, g0, thr[ti]);
    std::vector<Segment> p1, g1;
    for (const auto& q : preds[0]) {
      if (q.label == 1) p1.push_back(q);
    }
    for (const auto& g : gts[0]) {
      if (g.label == 1) g1.push_back(g);
    }
    double ap1 = oracle_ap(p1, g1, thr[ti]);
    CHECK(rep.ap[0][ti] == doctest::Approx(ap0).epsilon(1e-12));
    CHECK(rep.ap[1][ti] == doctest::Approx(ap1).epsilon(1e-12));
    CHECK(rep.map_per_threshold[ti] == doctest::Approx((ap0 + ap1) / 2).epsilon(1e-12));
  }
  double mean = 0;
  for (double m : rep.map_per_threshold) mean += m;
  CHECK(rep.avg_map == doctest::Approx(mean / double(thr.size())).epsilon(1e-15));
}

TEST_CASE("zero-GT classes are excluded from the mAP mean") {
  std::vector<std::vector<Segment>> gts = {{seg(0.0, 1.0, 0, 1)}};
  std::vector<std::vector<Segment>> preds = {{seg(0.0, 1.0, 0, 0.9)}};
  EvalReport rep = evaluate(preds, gts, 3);
  CHECK(rep.avg_map == doctest::Approx(1.0));
  CHECK(rep.ap[1][0] == -1.0);
  CHECK(rep.ap[2][0] == -1.0);
}

TEST_CASE("confusion matrix cross-label fixture increments (8,9)") {
  std::size_t C = 10;
  std::vector<std::vector<Segment>> gts = {{seg(1.0, 2.0, 8, 1)}};
  std::vector<std::vector<Segment>> preds = {{seg(1.0, 2.0, 9, 0.9)}};
  auto m = confusion_matrix(preds, gts, C, 0.5);
  CHECK(m[8][9] == 1);
  std::size_t total = 0;
  for (const auto& row : m) {
    for (std::size_t v : row) total += v;
  }
  CHECK(total == 1);
}

TEST_CASE("confusion rows sum to GT counts plus background spillover") {
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<Segment>> gts(3), preds(3);
  for (std::size_t s = 0; s < 3; ++s) {
    for (int i = 0; i < 5; ++i) {
      double a = 6.0 * u(rng);
      gts[s].push_back(seg(a, a + 0.4 + u(rng), int(rng() % 3), 1.0));
      a = 6.0 * u(rng);
      preds[s].push_back(seg(a, a + 0.4 + u(rng), int(rng() % 3), u(rng)));
    }
  }
  EvalReport rep = evaluate(preds, gts, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t row = 0;
    for (std::size_t k = 0; k < 4; ++k) row += rep.confusion[c][k];
    CHECK(row == rep.gt_count[c]);
  }
}

TEST_CASE("report serializations are well formed") {
  std::vector<std::vector<Segment>> gts = {{seg(0.0, 1.0, 0, 1), seg(2.0, 3.0, 1, 1)}};
  EvalReport rep = evaluate(gts, gts, 2);
  std::string j = rep.to_json();
  CHECK(j.find("\"avg_map\"") != std::string::npos);
  CHECK(j.find("\"confusion\"") != std::string::npos);
  std::string csv = rep.confusion_csv();
  CHECK(csv.find("background") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // header + 3 rows
  CHECK(rep.confusion_svg().find("<svg") == 0);
  CHECK(rep.map_chart_svg().find("polyline") != std::string::npos);
}
