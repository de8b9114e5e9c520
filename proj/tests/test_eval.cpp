#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <vector>

#include "vdd/eval.hpp"

using namespace vdd;

namespace {

EvalRecord rec(const char* pred, const char* gold, double conf) {
  return make_eval_record("s", pred, gold, conf);
}

TraceSource probe_source() {
  Vocabulary vocab({"<unk>", "yes", "no", "maybe"});
  std::map<TraceSource::Key, std::vector<double>> records;
  records[{"q1", Variant::NoneCtx, 0}] = {-40.0, 1.0, 0.0, -40.0};
  records[{"q2", Variant::NoneCtx, 0}] = {-40.0, 0.0, 0.0, 1.0};
  records[{"q1", Variant::Unk, 0}] = {-40.0, 0.0, 0.0, -40.0};
  records[{"q2", Variant::Unk, 0}] = {-40.0, 0.0, 0.0, 0.0};
  return TraceSource(std::move(vocab), std::move(records));
}

std::vector<Prompt> probe_prompts() {
  return {Prompt("q1", {0}, {{1}, {2}}), Prompt("q2", {0}, {{1}, {2}, {3}})};
}

}  // namespace

TEST_CASE("answer matching folds case and strips trailing punctuation") {
  CHECK(match_answer("Yes.", "yes"));
  CHECK(match_answer("  Brown ", "brown"));
  CHECK(!match_answer("no", "yes"));
  CHECK(match_answer("WHITE!?", "white"));
  CHECK(normalize_answer("  It's Fine...  ") == "it's fine");
  CHECK(normalize_answer("...") == "");
  CHECK(!match_answer("browns", "brown"));
}

TEST_CASE("eval records validate confidence and precompute correctness") {
  EvalRecord r = make_eval_record("id1", "Yes.", "yes", 0.8);
  CHECK(r.correct);
  CHECK(r.confidence == 0.8);
  CHECK(!make_eval_record("id2", "no", "yes", 0.5).correct);
  CHECK_THROWS_AS(make_eval_record("id", "a", "a", -0.1), Error);
  CHECK_THROWS_AS(make_eval_record("id", "a", "a", 1.1), Error);
}

TEST_CASE("overall accuracy is the correct fraction") {
  std::vector<EvalRecord> rs{rec("a", "a", 0.5), rec("a", "a", 0.5), rec("b", "a", 0.5),
                             rec("b", "a", 0.5), rec("a", "a", 0.5)};
  CHECK(overall_accuracy(rs) == 0.6);
  CHECK_THROWS_AS(overall_accuracy({}), Error);
}

TEST_CASE("f1 is the harmonic mean at any scale") {
  CHECK(f1_score(89.3, 76.2) == doctest::Approx(82.23154078549848).epsilon(1e-12));
  CHECK(std::abs(f1_score(89.3, 76.2) - 82.2) < 0.05);
  CHECK(f1_score(0.0, 0.0) == 0.0);
  CHECK(f1_score(1.0, 1.0) == 1.0);
}

TEST_CASE("classification metrics match a hand confusion matrix") {
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 3; ++i) rs.push_back(rec("Yes", "yes", 0.5));   // tp
  rs.push_back(rec("yes.", "no", 0.5));                               // fp
  for (int i = 0; i < 2; ++i) rs.push_back(rec("no", "YES", 0.5));    // fn
  for (int i = 0; i < 4; ++i) rs.push_back(rec("No", "no", 0.5));     // tn

  MetricReport m = classification_metrics(rs, "yes");
  CHECK(m.tp == 3);
  CHECK(m.fp == 1);
  CHECK(m.fn == 2);
  CHECK(m.tn == 4);
  CHECK(m.accuracy == 0.7);
  CHECK(m.precision == 0.75);
  CHECK(m.recall == 0.6);
  CHECK(m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.positive_label == "yes");
  CHECK(!m.zero_denominator);
}

TEST_CASE("metrics refuse more than two labels") {
  std::vector<EvalRecord> rs{rec("yes", "no", 0.5), rec("maybe", "yes", 0.5)};
  try {
    classification_metrics(rs, "yes");
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::NotBinary);
  }
}

TEST_CASE("zero denominators yield zero with a flag, never NaN") {
  std::vector<EvalRecord> rs{rec("no", "no", 0.5), rec("no", "no", 0.5)};
  MetricReport m = classification_metrics(rs, "yes");
  CHECK(m.zero_denominator);
  CHECK(m.precision == 0.0);
  CHECK(m.recall == 0.0);
  CHECK(m.f1 == 0.0);
  CHECK(m.accuracy == 1.0);
}

TEST_CASE("confidence bins are equal width with an inclusive top") {
  std::vector<EvalRecord> rs{rec("a", "a", 1.0), rec("a", "a", 0.95), rec("b", "a", 0.55),
                             rec("a", "a", 0.0)};
  auto bins = confidence_bins(rs, 10);
  REQUIRE(bins.size() == 10);
  CHECK(bins[0].lo == 0.0);
  CHECK(bins[9].hi == 1.0);
  CHECK(bins[9].count == 2);  // 1.0 and 0.95
  CHECK(bins[5].count == 1);
  CHECK(bins[5].correct == 0);
  CHECK(bins[0].count == 1);
  CHECK(bins[5].accuracy.value() == 0.0);
  CHECK(!bins[1].accuracy.has_value());

  CHECK_THROWS_AS(confidence_bins(rs, 0), Error);

  EvalRecord out_of_range = rs[0];
  out_of_range.confidence = 2.0;
  CHECK_THROWS_AS(confidence_bins({out_of_range}, 10), Error);
}

TEST_CASE("bin counts weight back to the overall accuracy") {
  SeededRng rng(17);
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 500; ++i) {
    const bool correct = (rng.next_u64() & 3) != 0;
    rs.push_back(rec(correct ? "a" : "b", "a", rng.next_unit()));
  }
  auto bins = confidence_bins(rs, 7);
  std::size_t count = 0, correct = 0;
  for (const auto& b : bins) {
    count += b.count;
    correct += b.correct;
  }
  CHECK(count == rs.size());
  const double weighted = static_cast<double>(correct) / static_cast<double>(count);
  CHECK(weighted == doctest::Approx(overall_accuracy(rs)).epsilon(1e-12));
}

TEST_CASE("bins serialize with null accuracy for empty bins") {
  std::vector<EvalRecord> rs{rec("a", "a", 0.95)};
  nlohmann::json j = bins_to_json(confidence_bins(rs, 2));
  REQUIRE(j.size() == 2);
  CHECK(j[0]["accuracy"].is_null());
  CHECK(j[0]["count"] == 0);
  CHECK(j[1]["accuracy"] == 1.0);
  CHECK(j[1]["correct"] == 1);

  std::ostringstream csv;
  write_bins_csv(confidence_bins(rs, 2), csv);
  CHECK(csv.str() == "lo,hi,count,correct,accuracy\n0,0.5,0,0,\n0.5,1,1,1,1\n");
}

TEST_CASE("the probe ranks mean label probabilities per variant") {
  TraceSource source = probe_source();
  ProbeReport report = probe_report(source, probe_prompts(),
                                    {VisualContext::none(), VisualContext::unk()}, 15);
  CHECK(report.prompt_count == 2);
  REQUIRE(report.rows.size() == 6);  // three labels under each variant

  // Under none: q1 prefers yes, q2 prefers maybe; yes keeps the top mean.
  CHECK(report.rows[0].variant == Variant::NoneCtx);
  CHECK(report.rows[0].rank == 1);
  CHECK(report.rows[0].answer == "yes");
  CHECK(report.rows[1].answer == "maybe");
  CHECK(report.rows[2].answer == "no");
  const double e = std::exp(1.0);
  CHECK(report.rows[0].probability ==
        doctest::Approx((e / (e + 1.0) + 1.0 / (2.0 + e)) / 2.0).epsilon(1e-12));

  // Under unk: yes and no tie exactly; first appearance wins.
  CHECK(report.rows[3].variant == Variant::Unk);
  CHECK(report.rows[3].answer == "yes");
  CHECK(report.rows[4].answer == "no");
  CHECK(report.rows[3].probability == report.rows[4].probability);
  CHECK(report.rows[5].answer == "maybe");
}

TEST_CASE("the probe is stable under prompt duplication") {
  TraceSource source = probe_source();
  auto once = probe_prompts();
  auto twice = probe_prompts();
  for (const auto& p : probe_prompts()) twice.push_back(p);

  ProbeReport a = probe_report(source, once, {VisualContext::none()}, 15);
  ProbeReport b = probe_report(source, twice, {VisualContext::none()}, 15);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].answer == b.rows[i].answer);
    CHECK(a.rows[i].rank == b.rows[i].rank);
    CHECK(a.rows[i].probability == doctest::Approx(b.rows[i].probability).epsilon(1e-12));
  }
}

TEST_CASE("the probe truncates to top_n and validates its inputs") {
  TraceSource source = probe_source();
  ProbeReport top1 = probe_report(source, probe_prompts(),
                                  {VisualContext::none(), VisualContext::unk()}, 1);
  REQUIRE(top1.rows.size() == 2);
  CHECK(top1.rows[0].rank == 1);
  CHECK(top1.rows[1].rank == 1);
  CHECK(top1.top_n == 1);

  CHECK_THROWS_AS(probe_report(source, {}, {VisualContext::none()}, 15), Error);
  CHECK_THROWS_AS(probe_report(source, probe_prompts(), {}, 15), Error);
  CHECK_THROWS_AS(probe_report(source, probe_prompts(), {VisualContext::none()}, 0), Error);
  try {
    probe_report(source, probe_prompts(), {VisualContext::real("q1")}, 15);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidDegradation);
  }
}

TEST_CASE("probe reports serialize as four-column TSV") {
  TraceSource source = probe_source();
  ProbeReport report = probe_report(source, probe_prompts(), {VisualContext::none()}, 2);
  std::ostringstream out;
  write_probe_tsv(report, out);

  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "variant\trank\tanswer\tprobability");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), '\t') == 3);
    CHECK(line.substr(0, 5) == "none\t");
  }
  CHECK(rows == 2);
}
