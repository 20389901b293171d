#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "idiombed/corpus.hpp"

using namespace idiombed;

namespace {

const fs::path kFixtures = FIXTURE_DIR;
const fs::path kData = DATA_DIR;

Dictionary fixture_dictionary() { return load_dictionary(kFixtures / "fixture_dictionary.jsonl"); }

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("idiombed_corpus_" + name);
}

}  // namespace

TEST_CASE("load_corpus ingests valid JSON lines") {
  const auto dict = fixture_dictionary();
  const fs::path path = temp_path("three.jsonl");
  write_file_atomic(path,
      R"({"instance_id":"a","idiom_id":"on_cloud_nine","text":"she was on cloud nine today","start":8,"end":21,"sense":"idiomatic","confidence":1.0,"split":"train"})"
      "\n"
      R"({"instance_id":"b","idiom_id":"on_cloud_nine","text":"on cloud nine again","start":0,"end":13,"sense":"idiomatic","confidence":0.9,"split":"test"})"
      "\n"
      R"({"instance_id":"c","idiom_id":"ride_high","text":"they ride high tonight","start":5,"end":14,"sense":"literal","confidence":1.0,"split":"train"})"
      "\n");
  const Corpus corpus = load_corpus(path, dict);
  REQUIRE(corpus.size() == 3);
  CHECK(corpus.instances()[0].pie_text() == "on cloud nine");
  CHECK(corpus.indices_for_split(Split::train).size() == 2);
  CHECK(corpus.unknown_idiom_ids().empty());
}

TEST_CASE("load_corpus rejects a span outside the text") {
  const auto dict = fixture_dictionary();
  const fs::path path = temp_path("bad_span.jsonl");
  write_file_atomic(path,
      R"({"instance_id":"a","idiom_id":"ride_high","text":"short","start":2,"end":99,"sense":"idiomatic","confidence":1.0,"split":"train"})"
      "\n");
  REQUIRE_THROWS_MATCHES(load_corpus(path, dict), ValidationError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("a")));
}

TEST_CASE("load_corpus names the line of a malformed record") {
  const auto dict = fixture_dictionary();
  const fs::path path = temp_path("bad_json.jsonl");
  write_file_atomic(path,
      R"({"instance_id":"a","idiom_id":"ride_high","text":"they ride high","start":5,"end":14,"sense":"idiomatic","confidence":1.0,"split":"train"})"
      "\n{not json\n");
  REQUIRE_THROWS_MATCHES(load_corpus(path, dict), ValidationError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("line 2")));
}

TEST_CASE("unknown idioms are retained but flagged") {
  const auto dict = fixture_dictionary();
  const fs::path path = temp_path("unknown.jsonl");
  write_file_atomic(path,
      R"({"instance_id":"a","idiom_id":"no_such_idiom","text":"mystery phrase here","start":0,"end":7,"sense":"idiomatic","confidence":1.0,"split":"train"})"
      "\n");
  const Corpus corpus = load_corpus(path, dict);
  REQUIRE(corpus.size() == 1);
  CHECK(corpus.unknown_idiom_ids().count("no_such_idiom") == 1);
}

TEST_CASE("corpus round-trips through save and load") {
  const auto dict = fixture_dictionary();
  const Corpus corpus = load_corpus(kFixtures / "fixture_corpus.jsonl", dict);
  const fs::path path = temp_path("roundtrip.jsonl");
  save_corpus(corpus, path);
  const Corpus again = load_corpus(path, dict);
  CHECK(corpus == again);
}

TEST_CASE("embedding view keeps monosemous perfect-confidence idiomatic instances") {
  const auto dict = fixture_dictionary();
  const Corpus corpus = load_corpus(kFixtures / "fixture_corpus.jsonl", dict);
  const Corpus view = filter_embedding_training_view(corpus, dict);

  CHECK(view.size() < corpus.size());
  for (const auto& inst : view.instances()) {
    CHECK(inst.sense == Sense::idiomatic);
    CHECK(inst.confidence == 1.0);
    CHECK(dict.at(inst.idiom_id).monosemous);
  }
  // see_stars and behind_closed_doors are polysemous in the fixture dictionary.
  CHECK(view.indices_for_idiom("see_stars").empty());
  CHECK(view.indices_for_idiom("behind_closed_doors").empty());

  // Idempotent and a strict subset.
  const Corpus twice = filter_embedding_training_view(view, dict);
  CHECK(twice == view);
}

TEST_CASE("probe view keeps both senses but drops imperfect confidence") {
  const auto dict = fixture_dictionary();
  const Corpus corpus = load_corpus(kFixtures / "fixture_corpus.jsonl", dict);
  const Corpus probe = filter_probe_training_view(corpus, dict);
  const Corpus embed = filter_embedding_training_view(corpus, dict);

  bool has_literal = false;
  for (const auto& inst : probe.instances()) {
    CHECK(inst.confidence == 1.0);
    if (inst.sense == Sense::literal) has_literal = true;
  }
  CHECK(has_literal);
  CHECK(probe.size() > embed.size());
}

TEST_CASE("literal instance with confidence 1.0 lands in probe view only") {
  const auto dict = fixture_dictionary();
  const fs::path path = temp_path("literal.jsonl");
  write_file_atomic(path,
      R"({"instance_id":"a","idiom_id":"ride_high","text":"they ride high on the wave","start":5,"end":14,"sense":"literal","confidence":1.0,"split":"train"})"
      "\n");
  const Corpus corpus = load_corpus(path, dict);
  CHECK(filter_embedding_training_view(corpus, dict).size() == 0);
  CHECK(filter_probe_training_view(corpus, dict).size() == 1);
}

TEST_CASE("instance with confidence 0.75 is excluded from both training views") {
  const auto dict = fixture_dictionary();
  const fs::path path = temp_path("lowconf.jsonl");
  write_file_atomic(path,
      R"({"instance_id":"a","idiom_id":"ride_high","text":"they ride high tonight","start":5,"end":14,"sense":"idiomatic","confidence":0.75,"split":"train"})"
      "\n");
  const Corpus corpus = load_corpus(path, dict);
  CHECK(filter_embedding_training_view(corpus, dict).size() == 0);
  CHECK(filter_probe_training_view(corpus, dict).size() == 0);
}

TEST_CASE("render_templates produces the four fixed frames") {
  IdiomEntry entry{"hit_the_sack", "hit the sack", "go to bed", true, std::nullopt};
  const auto templates = render_templates(entry);
  REQUIRE(templates.size() == 4);
  CHECK(templates[0].masked_text == "The idiom hit the sack means [MASK].");
  CHECK(templates[0].full_text == "The idiom hit the sack means go to bed.");
  CHECK(templates[1].full_text == "When people say hit the sack , they mean go to bed.");
  CHECK(templates[2].masked_text == "hit the sack is used to mean [MASK].");
  CHECK(templates[3].masked_text == "If someone says hit the sack , they mean that [MASK].");
  for (int i = 0; i < 4; ++i) {
    CHECK(templates[static_cast<size_t>(i)].template_index == i + 1);
    CHECK(templates[static_cast<size_t>(i)].masked_text.find("[MASK]") != std::string::npos);
    CHECK(templates[static_cast<size_t>(i)].masked_text.find("hit the sack") != std::string::npos);
    CHECK(templates[static_cast<size_t>(i)].full_text.find("go to bed") != std::string::npos);
    // exactly one mask sentinel
    const auto& m = templates[static_cast<size_t>(i)].masked_text;
    CHECK(m.find("[MASK]", m.find("[MASK]") + 1) == std::string::npos);
  }
}

TEST_CASE("render_templates is pure") {
  IdiomEntry entry{"bear_fruit", "bear fruit", "produce successful results", true, std::nullopt};
  const auto a = render_templates(entry);
  const auto b = render_templates(entry);
  for (size_t i = 0; i < 4; ++i) {
    CHECK(a[i].full_text == b[i].full_text);
    CHECK(a[i].masked_text == b[i].masked_text);
  }
}

TEST_CASE("render_templates requires a definition") {
  IdiomEntry entry{"mystery", "mystery phrase", "", true, std::nullopt};
  REQUIRE_THROWS_AS(render_templates(entry), ValidationError);
}

TEST_CASE("shipped meaning groups match the curated evaluation set") {
  const MeaningGroups groups = load_meaning_groups(kData / "meaning_groups.json");
  CHECK(groups.groups().size() == 20);
  CHECK(groups.idiom_count() == 129);
  CHECK_THAT(groups.mean_group_size(), Catch::Matchers::WithinAbs(6.45, 1e-9));
  for (const auto& g : groups.groups()) CHECK(g.idiom_ids.size() > 3);

  auto in_group = [&](const std::string& gid, const std::string& idiom) {
    const std::string* g = groups.group_of(idiom);
    return g != nullptr && *g == gid;
  };
  CHECK(in_group("happy", "on_cloud_nine"));
  CHECK(in_group("happy", "over_the_moon"));
  CHECK(in_group("happy", "ride_high"));
  CHECK(in_group("success", "home_and_dry"));
  CHECK(in_group("success", "bear_fruit"));
  CHECK(in_group("success", "hit_the_mark"));
  CHECK(in_group("quick", "in_two_shakes"));
  CHECK(in_group("quick", "full_tilt"));
  CHECK(in_group("quick", "quick_as_a_flash"));
  CHECK(in_group("death", "kick_the_bucket"));
  CHECK(in_group("death", "drop_like_flies"));
}

TEST_CASE("shipped dictionary covers every grouped idiom") {
  const MeaningGroups groups = load_meaning_groups(kData / "meaning_groups.json");
  const Dictionary dict = load_dictionary(kData / "idiom_dictionary.jsonl");
  for (const auto& id : groups.grouped_idioms()) {
    const IdiomEntry* e = dict.find(id);
    REQUIRE(e != nullptr);
    CHECK_FALSE(e->definition.empty());
    CHECK(e->monosemous);
  }
}

TEST_CASE("duplicate group membership is rejected") {
  const fs::path path = temp_path("dup_groups.json");
  write_file_atomic(path, R"({"groups":[
    {"group_id":"a","name":"a","idiom_ids":["x","y"]},
    {"group_id":"b","name":"b","idiom_ids":["y","z"]}]})");
  REQUIRE_THROWS_AS(load_meaning_groups(path), ValidationError);
}

TEST_CASE("duplicate instance ids are rejected") {
  const auto dict = fixture_dictionary();
  const fs::path path = temp_path("dup_instance.jsonl");
  const std::string line =
      R"({"instance_id":"a","idiom_id":"ride_high","text":"they ride high","start":5,"end":14,"sense":"idiomatic","confidence":1.0,"split":"train"})";
  write_file_atomic(path, line + "\n" + line + "\n");
  REQUIRE_THROWS_AS(load_corpus(path, dict), ValidationError);
}
