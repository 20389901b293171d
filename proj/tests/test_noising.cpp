#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "idiombed/noising.hpp"

using namespace idiombed;

namespace {

Tokenizer toy_tokenizer() {
  return Tokenizer({"i", "will", "hit", "the", "sack", "now", "am", "so", "tired",
                    "a", "b", "c", "d", "e", "f", "g"});
}

TokenizedInstance make_instance(const Tokenizer& tok, const std::string& text, size_t cs, size_t ce,
                                const std::string& id = "t1") {
  PieInstance p;
  p.instance_id = id;
  p.idiom_id = "hit_the_sack";
  p.text = text;
  p.start = cs;
  p.end = ce;
  p.sense = Sense::idiomatic;
  p.confidence = 1.0;
  p.split = Split::train;
  return tokenize_instance(p, tok);
}

// Deterministic synthetic instances for fuzz suites: random token ids with a
// random IE span.
std::vector<TokenizedInstance> fuzz_corpus(size_t n, Rng& rng) {
  std::vector<TokenizedInstance> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    TokenizedInstance inst;
    inst.instance_id = "fuzz" + std::to_string(i);
    inst.idiom_id = "idiom" + std::to_string(i % 37);
    const size_t len = 1 + uniform_below(rng, 24);
    inst.tokens.resize(len);
    for (auto& t : inst.tokens) t = static_cast<int>(5 + uniform_below(rng, 200));
    const size_t s = uniform_below(rng, len);
    const size_t w = 1 + uniform_below(rng, len - s);
    inst.ie_span = TokenSpan{s, s + w};
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

TEST_CASE("iti replaces the IE span with one mask") {
  const Tokenizer tok = toy_tokenizer();
  const auto inst = make_instance(tok, "i will hit the sack now", 7, 19);
  REQUIRE(inst.ie_span == TokenSpan{2, 5});

  const CorruptionExample ex = iti_transform(inst, tok.mask_id());
  CHECK(ex.transform == Transform::iti);
  CHECK(ex.source_tokens == std::vector<int>{tok.piece_id("i"), tok.piece_id("will"),
                                             Tokenizer::kMaskId, tok.piece_id("now")});
  CHECK(ex.target_tokens == inst.tokens);
  CHECK_FALSE(ex.ie_span_source.has_value());
  check_example_invariants(ex);
}

TEST_CASE("iti over the whole sentence leaves a lone mask") {
  const Tokenizer tok = toy_tokenizer();
  const auto inst = make_instance(tok, "hit the sack", 0, 12);
  const CorruptionExample ex = iti_transform(inst, tok.mask_id());
  CHECK(ex.source_tokens == std::vector<int>{Tokenizer::kMaskId});
  check_example_invariants(ex);
}

TEST_CASE("iti at position zero masks the head of the sentence") {
  const Tokenizer tok = toy_tokenizer();
  const auto inst = make_instance(tok, "hit the sack now", 0, 12);
  const CorruptionExample ex = iti_transform(inst, tok.mask_id());
  CHECK(ex.source_tokens == std::vector<int>{Tokenizer::kMaskId, tok.piece_id("now")});
  check_example_invariants(ex);
}

TEST_CASE("copy is the identity for any sentence") {
  const Tokenizer tok = toy_tokenizer();
  for (const auto* text : {"i will hit the sack now", "hit the sack"}) {
    const auto inst = make_instance(tok, text, std::string(text).find("hit"),
                                    std::string(text).find("sack") + 4);
    const CorruptionExample ex = copy_transform(inst);
    CHECK(ex.source_tokens == ex.target_tokens);
    CHECK(ex.source_tokens == inst.tokens);
    CHECK(ex.ie_span_source == inst.ie_span);
    check_example_invariants(ex);
  }
}

TEST_CASE("span infilling masks a contiguous non-IE run") {
  const Tokenizer tok = toy_tokenizer();
  // tokens: i am so tired i will hit the sack  -> IE (6,9)
  const auto inst = make_instance(tok, "i am so tired i will hit the sack", 21, 33);
  REQUIRE(inst.ie_span == TokenSpan{6, 9});
  NoisingPolicy policy;

  // Find a seed whose draw masks exactly (2,4): L=2 placed at token 2.
  bool found = false;
  for (uint64_t seed = 0; seed < 4000 && !found; ++seed) {
    Rng rng(seed);
    const CorruptionExample ex = span_infilling_transform(inst, policy, rng, tok.mask_id());
    check_example_invariants(ex);
    if (ex.transform == Transform::span_infill && ex.masked_span_target == TokenSpan{2, 4}) {
      CHECK(ex.source_tokens ==
            std::vector<int>{tok.piece_id("i"), tok.piece_id("am"), Tokenizer::kMaskId,
                             tok.piece_id("i"), tok.piece_id("will"), tok.piece_id("hit"),
                             tok.piece_id("the"), tok.piece_id("sack")});
      CHECK(ex.ie_span_source == TokenSpan{5, 8});
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("a zero-length draw equals the copy transform") {
  const Tokenizer tok = toy_tokenizer();
  const auto inst = make_instance(tok, "i will hit the sack now", 7, 19);
  NoisingPolicy policy;
  const CorruptionExample reference = copy_transform(inst);
  bool seen_zero = false;
  for (uint64_t seed = 0; seed < 500 && !seen_zero; ++seed) {
    Rng probe(seed);
    if (poisson_sample(probe, policy.span_lambda) != 0) continue;
    Rng rng(seed);
    const CorruptionExample ex = span_infilling_transform(inst, policy, rng, tok.mask_id());
    CHECK(ex.transform == reference.transform);
    CHECK(ex.source_tokens == reference.source_tokens);
    CHECK(ex.target_tokens == reference.target_tokens);
    seen_zero = true;
  }
  CHECK(seen_zero);
}

TEST_CASE("span infilling falls back to copy when the IE is the whole sentence") {
  const Tokenizer tok = toy_tokenizer();
  const auto inst = make_instance(tok, "hit the sack", 0, 12);
  NoisingPolicy policy;
  Rng rng(7);
  bool fell_back = false;
  // Draw until a nonzero length forces the fallback path.
  for (int i = 0; i < 50 && !fell_back; ++i) {
    const CorruptionExample ex = span_infilling_transform(inst, policy, rng, tok.mask_id(), &fell_back);
    CHECK(ex.source_tokens == ex.target_tokens);
  }
  CHECK(fell_back);
}

TEST_CASE("span infilling never touches IE tokens over many draws") {
  const Tokenizer tok = toy_tokenizer();
  const auto inst = make_instance(tok, "i am so tired i will hit the sack", 21, 33);
  NoisingPolicy policy;
  Rng rng(123);
  for (int i = 0; i < 2000; ++i) {
    const CorruptionExample ex = span_infilling_transform(inst, policy, rng, tok.mask_id());
    check_example_invariants(ex);
    if (ex.masked_span_target.has_value() && ex.transform == Transform::span_infill)
      CHECK_FALSE(ex.masked_span_target->overlaps(ex.ie_span_target));
  }
}

TEST_CASE("poisson draws have the configured mean") {
  Rng rng(99);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += poisson_sample(rng, 3.0);
  CHECK_THAT(sum / n, Catch::Matchers::WithinAbs(3.0, 0.05));
}

TEST_CASE("template infilling pairs masked and full renderings") {
  std::vector<std::string> pieces = {"The", "idiom", "hit", "the", "sack", "means", "go", "to",
                                     "bed", ".", ",", "When", "people", "say", "they", "mean",
                                     "is", "used", "If", "someone", "says", "that"};
  Tokenizer tok(pieces);
  IdiomEntry entry{"hit_the_sack", "hit the sack", "go to bed", true, std::nullopt};
  const auto templates = render_templates(entry);

  for (const auto& tmpl : templates) {
    const CorruptionExample ex = template_infilling_transform(tmpl, tok);
    check_example_invariants(ex);
    CHECK(ex.transform == Transform::template_infill);
    int masks = 0;
    for (int t : ex.source_tokens)
      if (t == Tokenizer::kMaskId) ++masks;
    CHECK(masks == 1);
    // IE tokens present in source.
    REQUIRE(ex.ie_span_source.has_value());
    CHECK(ex.source_tokens[ex.ie_span_source->start_token] == tok.piece_id("hit"));
  }

  // Template 1 target ends with the definition tokens then the period.
  const CorruptionExample ex1 = template_infilling_transform(templates[0], tok);
  const size_t n = ex1.target_tokens.size();
  CHECK(ex1.target_tokens[n - 4] == tok.piece_id("go"));
  CHECK(ex1.target_tokens[n - 3] == tok.piece_id("to"));
  CHECK(ex1.target_tokens[n - 2] == tok.piece_id("bed"));
  CHECK(ex1.target_tokens[n - 1] == tok.piece_id("."));
  REQUIRE(ex1.masked_span_target.has_value());
  CHECK(*ex1.masked_span_target == TokenSpan{n - 4, n - 1});
}

TEST_CASE("four templates give four distinct corruption examples") {
  std::vector<std::string> pieces = {"The", "idiom", "bear", "fruit", "means", "produce",
                                     "successful", "results", ".", ",", "When", "people", "say",
                                     "they", "mean", "is", "used", "to", "If", "someone", "says",
                                     "that"};
  Tokenizer tok(pieces);
  IdiomEntry entry{"bear_fruit", "bear fruit", "produce successful results", true, std::nullopt};
  const auto templates = render_templates(entry);
  std::set<std::vector<int>> sources;
  for (const auto& tmpl : templates)
    sources.insert(template_infilling_transform(tmpl, tok).source_tokens);
  CHECK(sources.size() == 4);
}

TEST_CASE("schedule assigns ITI at the configured rate") {
  Rng seed_rng(5);
  auto instances = fuzz_corpus(10000, seed_rng);
  const Tokenizer tok;
  NoisingPolicy policy;
  policy.p_iti = 0.5;
  policy.template_mix = 0.0;
  const auto examples = schedule_epoch(instances, {}, policy, tok, 0);
  REQUIRE(examples.size() == instances.size());
  double iti = 0;
  for (const auto& ex : examples)
    if (ex.transform == Transform::iti) iti += 1;
  CHECK_THAT(iti / static_cast<double>(examples.size()),
             Catch::Matchers::WithinAbs(0.5, 0.02));
}

TEST_CASE("p_iti of one maps every sentence to ITI") {
  Rng seed_rng(6);
  auto instances = fuzz_corpus(300, seed_rng);
  const Tokenizer tok;
  NoisingPolicy policy;
  policy.p_iti = 1.0;
  policy.template_mix = 0.0;
  for (const auto& ex : schedule_epoch(instances, {}, policy, tok, 3))
    CHECK(ex.transform == Transform::iti);
}

TEST_CASE("same seed and epoch reproduce the schedule byte for byte") {
  Rng seed_rng(7);
  auto instances = fuzz_corpus(500, seed_rng);
  const Tokenizer tok;
  NoisingPolicy policy;
  policy.seed = 42;
  policy.template_mix = 0.0;
  const auto a = schedule_epoch(instances, {}, policy, tok, 11);
  const auto b = schedule_epoch(instances, {}, policy, tok, 11);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].source_tokens == b[i].source_tokens);
    CHECK(a[i].transform == b[i].transform);
  }
  // Different epochs give a different assignment somewhere.
  const auto c = schedule_epoch(instances, {}, policy, tok, 12);
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].transform != c[i].transform || a[i].source_tokens != c[i].source_tokens) differs = true;
  CHECK(differs);
}

TEST_CASE("every target appears exactly once per epoch regardless of transform") {
  Rng seed_rng(8);
  auto instances = fuzz_corpus(400, seed_rng);
  const Tokenizer tok;
  NoisingPolicy policy;
  policy.template_mix = 0.0;
  const auto examples = schedule_epoch(instances, {}, policy, tok, 2);
  std::multiset<std::vector<int>> want, got;
  for (const auto& inst : instances) want.insert(inst.tokens);
  for (const auto& ex : examples)
    if (ex.transform != Transform::template_infill) got.insert(ex.target_tokens);
  CHECK(want == got);
}

TEST_CASE("fuzz corpus of one thousand sentences satisfies every invariant") {
  Rng seed_rng(9);
  auto instances = fuzz_corpus(1000, seed_rng);
  const Tokenizer tok;
  NoisingPolicy policy;
  policy.template_mix = 0.0;
  for (uint64_t epoch = 0; epoch < 3; ++epoch) {
    for (const auto& ex : schedule_epoch(instances, {}, policy, tok, epoch))
      check_example_invariants(ex);
  }
}

TEST_CASE("templates are appended to the companion pool at the configured rate") {
  Rng seed_rng(10);
  auto instances = fuzz_corpus(2000, seed_rng);
  // Give every fuzz idiom a template set keyed off one entry.
  std::vector<std::string> pieces = {"The", "idiom", "hit", "the", "sack", "means", "go", "to",
                                     "bed", ".", ",", "When", "people", "say", "they", "mean",
                                     "is", "used", "If", "someone", "says", "that"};
  Tokenizer tok(pieces);
  IdiomEntry entry{"hit_the_sack", "hit the sack", "go to bed", true, std::nullopt};
  const auto t = render_templates(entry);
  std::vector<TemplateSentence> templates(t.begin(), t.end());

  NoisingPolicy policy;
  policy.template_mix = 0.2;
  const auto examples = schedule_epoch(instances, templates, policy, tok, 0);
  size_t companions = 0, tmpl = 0;
  for (const auto& ex : examples) {
    if (ex.transform == Transform::template_infill) ++tmpl;
    else if (ex.transform != Transform::iti) ++companions;
  }
  CHECK(tmpl == static_cast<size_t>(std::llround(0.2 * static_cast<double>(companions))));
}
