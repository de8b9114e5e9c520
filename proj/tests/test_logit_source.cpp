#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vdd/fixtures.hpp"
#include "vdd/logit_source.hpp"

using namespace vdd;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "vdd_tests";
  fs::create_directories(dir);
  return dir / name;
}

ScenarioSpec tiny_scenario(double jitter = 0.0) {
  ScenarioSpec spec{Vocabulary({"<unk>", "a", "b"}), jitter, {}};
  ScenarioSample s;
  s.id = "s1";
  s.text = {0};
  s.candidates = {{1}, {2}};
  s.gold = {1};
  ScenarioStep st;
  st.prior = {0.0, 1.0, 2.0};
  st.evidence_real = {0.0, 3.0, -1.0};
  st.evidence_degenerate = {0.5, 0.0, 0.25};
  s.steps = {st};
  spec.samples.push_back(std::move(s));
  return spec;
}

}  // namespace

TEST_CASE("degrade_visual maps a real context to each degenerate variant") {
  VisualContext real = VisualContext::real("img_7");

  CHECK(degrade_visual(real, Variant::NoneCtx).variant == Variant::NoneCtx);
  CHECK(degrade_visual(real, Variant::Unk).variant == Variant::Unk);
  CHECK(degrade_visual(real, Variant::Zeros).variant == Variant::Zeros);
  CHECK(degrade_visual(real, Variant::Ones).variant == Variant::Ones);
  CHECK(degrade_visual(real, Variant::NoneCtx).real_id.empty());

  VisualContext noise = degrade_visual(real, Variant::Noise, 99);
  CHECK(noise.variant == Variant::Noise);
  CHECK(noise.noise_seed == Fnv1a().update_u64(99).update_str("img_7").digest());
  CHECK(degrade_visual(real, Variant::Noise, 99).noise_seed == noise.noise_seed);
  CHECK(degrade_visual(real, Variant::Noise, 100).noise_seed != noise.noise_seed);

  CHECK_THROWS_AS(degrade_visual(VisualContext::none(), Variant::Unk), Error);
  CHECK_THROWS_AS(degrade_visual(real, Variant::Real), Error);
  try {
    degrade_visual(VisualContext::zeros(), Variant::NoneCtx);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::InvalidDegradation);
  }
}

TEST_CASE("variant tags round-trip") {
  for (Variant v : {Variant::Real, Variant::NoneCtx, Variant::Unk, Variant::Noise,
                    Variant::Zeros, Variant::Ones})
    CHECK(variant_from_tag(variant_tag(v)).value() == v);
  CHECK(!variant_from_tag("blurred").has_value());
}

TEST_CASE("prompt validates text and candidate labels") {
  CHECK_NOTHROW(Prompt("p", {1, 2}, {{1}, {2}}));
  CHECK_THROWS_AS(Prompt("p", {}), Error);
  try {
    Prompt("p", {1}, {{1}, {}});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::BadCandidate);
  }
  try {
    Prompt("p", {1}, {{1, 2}, {1, 2}});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::BadCandidate);
  }
}

TEST_CASE("scenario source adds the evidence row selected by the variant") {
  ScenarioSource source(tiny_scenario());
  Prompt prompt("s1", {0});

  LogitVector real = source.query(prompt, VisualContext::real("ctx"), {});
  CHECK(real[0] == 0.0);
  CHECK(real[1] == 4.0);
  CHECK(real[2] == 1.0);

  LogitVector none = source.query(prompt, VisualContext::none(), {});
  CHECK(none[0] == 0.5);
  CHECK(none[1] == 1.0);
  CHECK(none[2] == 2.25);

  // Every image-free variant reads the same degenerate row.
  for (auto ctx : {VisualContext::unk(), VisualContext::zeros(), VisualContext::ones()}) {
    LogitVector other = source.query(prompt, ctx, {});
    for (std::size_t i = 0; i < other.size(); ++i) CHECK(other[i] == none[i]);
  }
  // Noise too, once jitter is disabled.
  LogitVector quiet = source.query(prompt, VisualContext::noise(5), {});
  for (std::size_t i = 0; i < quiet.size(); ++i) CHECK(quiet[i] == none[i]);
}

TEST_CASE("scenario noise jitter is bounded, seeded, and deterministic") {
  ScenarioSource source(tiny_scenario(0.01));
  Prompt prompt("s1", {0});

  LogitVector base = source.query(prompt, VisualContext::none(), {});
  LogitVector a = source.query(prompt, VisualContext::noise(5), {});
  LogitVector b = source.query(prompt, VisualContext::noise(5), {});
  LogitVector c = source.query(prompt, VisualContext::noise(6), {});

  bool any_moved = false;
  bool differs_by_seed = false;
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(std::abs(a[i] - base[i]) <= 0.01);
    CHECK(a[i] == b[i]);
    any_moved = any_moved || a[i] != base[i];
    differs_by_seed = differs_by_seed || a[i] != c[i];
  }
  CHECK(any_moved);
  CHECK(differs_by_seed);
}

TEST_CASE("scenario source reports misses and shape problems") {
  ScenarioSource source(tiny_scenario());
  Prompt other("s9", {0});
  Prompt prompt("s1", {0});

  try {
    source.query(other, VisualContext::none(), {});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TraceMiss);
  }
  std::vector<TokenId> prefix{1};
  try {
    source.query(prompt, VisualContext::none(), prefix);  // only step 0 exists
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TraceMiss);
  }

  ScenarioSpec bad_row = tiny_scenario();
  bad_row.samples[0].steps[0].prior.pop_back();
  try {
    ScenarioSource bad(std::move(bad_row));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::VocabMismatch);
  }

  ScenarioSpec dup = tiny_scenario();
  dup.samples.push_back(dup.samples[0]);
  try {
    ScenarioSource bad(std::move(dup));
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DuplicateRecord);
  }
}

TEST_CASE("scenario prompts and sample lookup") {
  ScenarioSource source(tiny_scenario());
  auto prompts = source.prompts();
  REQUIRE(prompts.size() == 1);
  CHECK(prompts[0].sample_id == "s1");
  CHECK(prompts[0].candidate_labels.size() == 2);
  CHECK(source.find_sample("s1") != nullptr);
  CHECK(source.find_sample("nope") == nullptr);
}

TEST_CASE("procedural source is deterministic and sensitive to its inputs") {
  ProceduralSource source(ProceduralModelSpec{8, 1.0, 1.0, 3});
  Prompt p1("q1", {1});
  Prompt p2("q2", {1});
  std::vector<TokenId> prefix{2, 3};

  LogitVector a = source.query(p1, VisualContext::real("q1"), prefix);
  LogitVector b = source.query(p1, VisualContext::real("q1"), prefix);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] >= -2.0);
    CHECK(a[i] <= 2.0);
  }

  bool sample_matters = false;
  LogitVector c = source.query(p2, VisualContext::real("q2"), prefix);
  for (std::size_t i = 0; i < a.size(); ++i) sample_matters = sample_matters || a[i] != c[i];
  CHECK(sample_matters);

  bool prefix_matters = false;
  LogitVector d = source.query(p1, VisualContext::real("q1"), {});
  for (std::size_t i = 0; i < a.size(); ++i) prefix_matters = prefix_matters || a[i] != d[i];
  CHECK(prefix_matters);

  bool noise_seed_matters = false;
  LogitVector e = source.query(p1, VisualContext::noise(1), prefix);
  LogitVector f = source.query(p1, VisualContext::noise(2), prefix);
  for (std::size_t i = 0; i < e.size(); ++i)
    noise_seed_matters = noise_seed_matters || e[i] != f[i];
  CHECK(noise_seed_matters);
}

TEST_CASE("procedural degenerate evidence ignores the sample id") {
  // With the prior term switched off, two different samples must see the
  // exact same degenerate logits.
  ProceduralSource source(ProceduralModelSpec{8, 0.0, 1.0, 3});
  LogitVector a = source.query(Prompt("q1", {1}), VisualContext::unk(), {});
  LogitVector b = source.query(Prompt("q2", {1}), VisualContext::unk(), {});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // The real evidence does not.
  LogitVector c = source.query(Prompt("q1", {1}), VisualContext::real("q1"), {});
  LogitVector d = source.query(Prompt("q2", {1}), VisualContext::real("q2"), {});
  bool differs = false;
  for (std::size_t i = 0; i < c.size(); ++i) differs = differs || c[i] != d[i];
  CHECK(differs);
}

TEST_CASE("procedural source validates its spec") {
  CHECK_THROWS_AS(ProceduralSource(ProceduralModelSpec{1, 1.0, 1.0, 0}), Error);
  CHECK_THROWS_AS(ProceduralSource(ProceduralModelSpec{8, -0.5, 1.0, 0}), Error);
  ProceduralSource source(ProceduralModelSpec{8, 1.0, 1.0, 0});
  std::vector<TokenId> bad_prefix{42};
  CHECK_THROWS_AS(source.query(Prompt("q", {1}), VisualContext::none(), bad_prefix), Error);
}

TEST_CASE("trace source replays records and reports misses") {
  TraceSource trace = make_golden_trace(11);
  CHECK(trace.record_count() == 36);
  CHECK(trace.sample_ids() == std::vector<std::string>{"s1", "s2", "s3"});

  Prompt prompt("s1", {0});
  LogitVector real0 = trace.query(prompt, VisualContext::real("s1"), {});
  CHECK(real0.size() == trace.vocab().size());
  std::vector<TokenId> prefix{1};
  CHECK_NOTHROW(trace.query(prompt, VisualContext::none(), prefix));

  std::vector<TokenId> deep{1, 2};
  try {
    trace.query(prompt, VisualContext::none(), deep);  // steps 0 and 1 only
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TraceMiss);
  }
  try {
    trace.query(Prompt("s4", {0}), VisualContext::none(), {});
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::TraceMiss);
  }
}

TEST_CASE("trace files round-trip byte for byte") {
  TraceSource trace = make_golden_trace(11);
  fs::path path = temp_file("roundtrip.jsonl");
  write_trace(trace, path.string());

  TraceSource reloaded = load_trace(path.string());
  CHECK(reloaded.record_count() == trace.record_count());

  std::ostringstream first, second;
  write_trace(trace, first);
  write_trace(reloaded, second);
  CHECK(first.str() == second.str());

  std::ifstream in(path);
  std::stringstream from_disk;
  from_disk << in.rdbuf();
  CHECK(from_disk.str() == first.str());
}

TEST_CASE("trace parser pins errors to their line") {
  auto write_lines = [](const fs::path& p, const std::vector<std::string>& lines) {
    std::ofstream out(p, std::ios::binary);
    for (const auto& l : lines) out << l << "\n";
  };
  const std::string header = R"({"format":"vdd-trace/1","vocab":["<unk>","a"]})";

  fs::path p = temp_file("bad_trace.jsonl");

  write_lines(p, {R"({"format":"vdd-trace/9","vocab":["<unk>"]})"});
  CHECK_THROWS_WITH_AS(load_trace(p.string()), doctest::Contains(":1:"), Error);

  write_lines(p, {header, R"({"sample":"s","variant":"real","step":0,"logits":[1.0]})"});
  try {
    load_trace(p.string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::VocabMismatch);
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write_lines(p, {header, R"({"sample":"s","variant":"real","step":0,"logits":[1.0,2.0]})",
                  R"({"sample":"s","variant":"real","step":0,"logits":[1.0,2.0]})"});
  try {
    load_trace(p.string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DuplicateRecord);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }

  write_lines(p, {header, R"({"sample":"s","variant":"blurred","step":0,"logits":[1.0,2.0]})"});
  CHECK_THROWS_WITH_AS(load_trace(p.string()), doctest::Contains("blurred"), Error);

  write_lines(p, {header, "this is not json"});
  try {
    load_trace(p.string());
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ParseError);
  }

  write_lines(p, {header, R"({"sample":"s","variant":"real","step":-1,"logits":[1.0,2.0]})"});
  CHECK_THROWS_AS(load_trace(p.string()), Error);

  CHECK_THROWS_AS(load_trace((temp_file("missing_dir") / "x.jsonl").string()), Error);
}

TEST_CASE("trace parser skips blank lines") {
  fs::path p = temp_file("blank_lines.jsonl");
  std::ofstream out(p, std::ios::binary);
  out << R"({"format":"vdd-trace/1","vocab":["<unk>","a"]})" << "\n\n"
      << R"({"sample":"s","variant":"real","step":0,"logits":[1.0,2.0]})" << "\n";
  out.close();
  CHECK(load_trace(p.string()).record_count() == 1);
}

TEST_CASE("scenario specs round-trip through JSON") {
  ScenarioSpec spec = tiny_scenario(0.25);
  nlohmann::json doc = scenario_to_json(spec);
  ScenarioSpec back = scenario_from_json(doc, "mem");

  CHECK(back.vocabulary.tokens() == spec.vocabulary.tokens());
  CHECK(back.noise_jitter == spec.noise_jitter);
  REQUIRE(back.samples.size() == 1);
  CHECK(back.samples[0].id == spec.samples[0].id);
  CHECK(back.samples[0].candidates == spec.samples[0].candidates);
  CHECK(back.samples[0].gold == spec.samples[0].gold);
  CHECK(back.samples[0].steps[0].prior == spec.samples[0].steps[0].prior);
  CHECK(back.samples[0].steps[0].evidence_real == spec.samples[0].steps[0].evidence_real);
  CHECK(back.samples[0].steps[0].evidence_degenerate ==
        spec.samples[0].steps[0].evidence_degenerate);

  fs::path p = temp_file("scenario.json");
  save_scenario(spec, p.string());
  ScenarioSpec from_disk = load_scenario(p.string());
  CHECK(scenario_to_json(from_disk) == doc);

  nlohmann::json wrong = doc;
  wrong["format"] = "vdd-scenario/9";
  CHECK_THROWS_AS(scenario_from_json(wrong, "mem"), Error);
}
