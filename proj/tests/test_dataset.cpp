#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "subspace_probe/dataset.hpp"
#include "subspace_probe/error.hpp"
#include "test_util.hpp"

using namespace subspace_probe;

namespace {

EntityRecord person(std::string id, std::string name, double year,
                    AttributeKind kind = AttributeKind::birth_year) {
  return EntityRecord{std::move(id), std::move(name), kind, year};
}

std::vector<EntityRecord> years_fixture(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> year(-500, 2000);
  std::vector<EntityRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(person("Q" + std::to_string(i), "Person " + std::to_string(i), year(rng)));
  }
  return out;
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("entity parsing") {
  std::istringstream ok(
      R"({"id":"Q937","name":"Albert Einstein","attribute_kind":"birth_year","value":1879})"
      "\n\n"
      R"({"id":"Q85","name":"Cairo","attribute_kind":"latitude","value":30.04})"
      "\n");
  const auto entities = parse_entities(ok);
  REQUIRE(entities.size() == 2);
  CHECK(entities[0].name == "Albert Einstein");
  CHECK(entities[0].value == 1879);
  CHECK(entities[1].attribute_kind == AttributeKind::latitude);

  std::istringstream out_of_range(
      R"({"id":"X","name":"Nowhere","attribute_kind":"latitude","value":95.0})");
  CHECK_THROWS_WITH_AS(parse_entities(out_of_range), doctest::Contains("outside [-90, 90]"), DatasetError);

  std::istringstream dup(
      R"({"id":"Q1","name":"A","attribute_kind":"birth_year","value":1})" "\n"
      R"({"id":"Q1","name":"B","attribute_kind":"birth_year","value":2})");
  CHECK_THROWS_WITH_AS(parse_entities(dup), doctest::Contains("line 2: duplicate entity id 'Q1'"), DatasetError);

  std::istringstream bad_kind(R"({"id":"Q1","name":"A","attribute_kind":"height","value":1})");
  CHECK_THROWS_AS(parse_entities(bad_kind), DatasetError);

  std::istringstream too_old(R"({"id":"Q1","name":"A","attribute_kind":"birth_year","value":-9000})");
  CHECK_THROWS_AS(parse_entities(too_old), DatasetError);
  std::istringstream too_old2(R"({"id":"Q1","name":"A","attribute_kind":"birth_year","value":-9000})");
  CHECK(parse_entities(too_old2, ValueBounds{-10000, 2500}).size() == 1);

  CHECK_THROWS_WITH_AS(load_entities("/nonexistent/entities.jsonl"),
                       doctest::Contains("/nonexistent/entities.jsonl"), DatasetError);
}

TEST_CASE("entities and overrides round-trip through files") {
  testutil::TempDir dir("ds");
  const std::vector<EntityRecord> entities{person("Q1", "Ada", 1815), person("Q2", "Moses", -1393)};
  write_entities(dir / "e.jsonl", entities);
  CHECK(load_entities(dir / "e.jsonl") == entities);

  std::ofstream(dir / "o.jsonl") << R"({"id":"Q2","value":-1392})" << "\n";
  const auto fixed = apply_overrides(entities, dir / "o.jsonl");
  CHECK(fixed[0].value == 1815);
  CHECK(fixed[1].value == -1392);

  std::ofstream(dir / "bad.jsonl") << R"({"id":"Q9","value":1})" << "\n";
  CHECK_THROWS_AS(apply_overrides(entities, dir / "bad.jsonl"), DatasetError);
}

TEST_CASE("comparison templates ship verbatim") {
  const auto& t = find_template(Task::comparison, AttributeKind::death_year, 1);
  CHECK(t.text == "Did {entity_x} die before {entity_y}? Answer with Yes or No.");
  CHECK(find_template(Task::comparison, AttributeKind::birth_year, 1).text ==
        "Did {entity_x} come into the world earlier than {entity_y}? Answer with Yes or No.");
  CHECK(find_template(Task::comparison, AttributeKind::latitude, 1).text ==
        "Is {entity_x} located at a higher latitude than {entity_y}? Answer Yes or No.");

  std::size_t comparison = 0;
  std::size_t extraction = 0;
  for (const auto& tpl : builtin_templates()) {
    validate_template(tpl);
    if (tpl.task == Task::comparison) {
      ++comparison;
      CHECK_FALSE(tpl.reconstructed);
    } else {
      ++extraction;
      CHECK(tpl.reconstructed);
    }
  }
  CHECK(comparison == 30);
  CHECK(extraction == 30);
  CHECK_THROWS_AS(find_template(Task::comparison, AttributeKind::latitude, 11), DatasetError);
}

TEST_CASE("templates save and load") {
  testutil::TempDir dir("tpl");
  save_templates(dir / "t.json", builtin_templates());
  const auto loaded = load_templates(dir / "t.json");
  REQUIRE(loaded.size() == builtin_templates().size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].text == builtin_templates()[i].text);
    CHECK(loaded[i].reconstructed == builtin_templates()[i].reconstructed);
  }
}

TEST_CASE("rendering a comparison prompt") {
  const auto einstein = person("Q937", "Albert Einstein", 1955, AttributeKind::death_year);
  const auto newton = person("Q935", "Isaac Newton", 1727, AttributeKind::death_year);
  const auto& t = find_template(Task::comparison, AttributeKind::death_year, 1);
  const auto r = render_comparison_prompt(t, einstein, newton);
  CHECK(r.text == "Did Albert Einstein die before Isaac Newton? Answer with Yes or No.");
  CHECK(r.text.substr(r.entity_x.begin, r.entity_x.end - r.entity_x.begin) == "Albert Einstein");
  REQUIRE(r.entity_y);
  CHECK(r.text.substr(r.entity_y->begin, r.entity_y->end - r.entity_y->begin) == "Isaac Newton");

  CHECK_THROWS_AS(render_comparison_prompt(t, einstein, einstein), DatasetError);

  PromptTemplate twice{99, Task::comparison, AttributeKind::death_year,
                       "{entity_x} or {entity_x} vs {entity_y}?", false};
  CHECK_THROWS_AS(validate_template(twice), DatasetError);
  CHECK_THROWS_AS(render_comparison_prompt(twice, einstein, newton), DatasetError);
}

TEST_CASE("spans in code points for non-ASCII names") {
  const auto a = person("Q1", "Kurt G\xC3\xB6" "del", 1906);
  const auto b = person("Q2", "Emmy Noether", 1882);
  const auto r = render_comparison_prompt(find_template(Task::comparison, AttributeKind::birth_year, 1), a, b);
  // "Did " is 4 code points; the o-umlaut is 2 bytes but 1 code point.
  CHECK(codepoint_offset(r.text, r.entity_x.begin) == 4);
  CHECK(codepoint_offset(r.text, r.entity_x.end) == 4 + 10);
  CHECK(r.entity_x.end - r.entity_x.begin == 11);
}

TEST_CASE("gold comparison labels") {
  // Einstein 1879 vs Newton 1643, born before -> No.
  CHECK(gold_comparison_label(AttributeKind::birth_year, 1879, 1643) == Answer::No);
  // Einstein died 1955, Newton died 1727 -> No.
  CHECK(gold_comparison_label(AttributeKind::death_year, 1955, 1727) == Answer::No);
  // Cairo 30.04 vs Jerusalem 31.77, higher latitude -> No; reversed -> Yes.
  CHECK(gold_comparison_label(AttributeKind::latitude, 31.77, 30.04) == Answer::Yes);
  CHECK(gold_comparison_label(AttributeKind::birth_year, -1393, 1879) == Answer::Yes);
  CHECK_THROWS_AS(gold_comparison_label(AttributeKind::birth_year, 1900, 1900), DatasetError);
}

TEST_CASE("numeric answer parsing") {
  CHECK(parse_numeric_answer(AttributeKind::birth_year, "1392 BC") == -1392);
  CHECK(parse_numeric_answer(AttributeKind::birth_year, "1392 B.C.") == -1392);
  CHECK(parse_numeric_answer(AttributeKind::birth_year, "around 500 BCE.") == -500);
  CHECK(parse_numeric_answer(AttributeKind::birth_year, "-1393") == -1393);
  CHECK(parse_numeric_answer(AttributeKind::birth_year, "\xE2\x88\x92" "44") == -44);
  CHECK(parse_numeric_answer(AttributeKind::birth_year, "1879") == 1879);
  CHECK(parse_numeric_answer(AttributeKind::death_year, "He died in 1727.") == 1727);
  CHECK(parse_numeric_answer(AttributeKind::birth_year, "1879 because") == 1879);
  CHECK(parse_numeric_answer(AttributeKind::latitude, "30.04\xC2\xB0 N") == doctest::Approx(30.04));
  CHECK(parse_numeric_answer(AttributeKind::latitude, "33.9\xC2\xB0 S") == doctest::Approx(-33.9));
  CHECK(parse_numeric_answer(AttributeKind::latitude, "33.9 degrees south") == doctest::Approx(-33.9));
  CHECK(parse_numeric_answer(AttributeKind::latitude, "51.5") == doctest::Approx(51.5));
  try {
    parse_numeric_answer(AttributeKind::birth_year, "I don't know");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.raw_text() == "I don't know");
  }
}

TEST_CASE("format then parse is the identity on canonical renderings") {
  for (double v : {1879.0, -1392.0, 0.0, 2024.0, -4999.0}) {
    CHECK(parse_numeric_answer(AttributeKind::birth_year,
                               format_numeric_answer(AttributeKind::birth_year, v)) == v);
  }
  for (double v : {30.04, -33.9, 0.0, 89.5, -0.25}) {
    CHECK(parse_numeric_answer(AttributeKind::latitude,
                               format_numeric_answer(AttributeKind::latitude, v)) == v);
  }
  CHECK(format_numeric_answer(AttributeKind::latitude, -33.9) == "33.9\xC2\xB0 S");
  CHECK(format_numeric_answer(AttributeKind::birth_year, -1392) == "1392 BC");
}

TEST_CASE("comparison answer normalization") {
  CHECK(parse_comparison_answer("Yes") == Answer::Yes);
  CHECK(parse_comparison_answer("  no, he was not") == Answer::No);
  CHECK(parse_comparison_answer("**YES**") == Answer::Yes);
  CHECK(parse_comparison_answer("True") == Answer::Yes);
  CHECK(parse_comparison_answer("false.") == Answer::No);
  CHECK(parse_comparison_answer("Correct") == Answer::Yes);
  CHECK(parse_comparison_answer("Incorrect") == Answer::No);
  CHECK_FALSE(parse_comparison_answer("Nobody knows"));
  CHECK_FALSE(parse_comparison_answer("Yesterday"));
  CHECK_FALSE(parse_comparison_answer(""));
}

TEST_CASE("extraction scoring") {
  CHECK(score_extraction(AttributeKind::death_year, 1727, 1727));
  CHECK_FALSE(score_extraction(AttributeKind::death_year, 1728, 1727));
  CHECK(score_extraction(AttributeKind::latitude, 30.4, 30.04));
  CHECK_FALSE(score_extraction(AttributeKind::latitude, 30.9, 30.04));

  const auto moses = person("Q1", "Moses", -1393);
  const auto rec = score_extraction_answer(moses, "1392");
  CHECK(rec.parsed_value == 1392);
  CHECK_FALSE(rec.correct);
  const auto none = score_extraction_answer(moses, "unknown");
  CHECK_FALSE(none.parsed_value);
  CHECK_FALSE(none.correct);
}

TEST_CASE("answers JSONL round-trip") {
  testutil::TempDir dir("ans");
  std::vector<AnswerRecord> answers{
      score_extraction_answer(person("Q1", "A", 1879), "1879"),
      score_comparison_answer("cmp-000001", Answer::No, "No."),
      score_comparison_answer("cmp-000002", Answer::No, "Maybe"),
  };
  write_answers(dir / "a.jsonl", answers);
  const auto back = load_answers(dir / "a.jsonl");
  REQUIRE(back.size() == 3);
  CHECK(back[0].parsed_value == 1879);
  CHECK(back[0].correct);
  CHECK(back[1].parsed_answer == Answer::No);
  CHECK(back[1].correct);
  CHECK_FALSE(back[2].parsed_answer);
  CHECK_FALSE(back[2].correct);
}

TEST_CASE("filtering by extraction answers") {
  const std::vector<EntityRecord> es{person("A", "a", 1), person("B", "b", 2), person("C", "c", 3)};
  std::map<std::string, AnswerRecord> answers;
  answers["A"] = score_extraction_answer(es[0], "1");
  answers["B"] = score_extraction_answer(es[1], "7");
  answers["C"] = score_extraction_answer(es[2], "3");
  const auto r = filter_entities(es, answers);
  CHECK(r.n_kept == 2);
  CHECK(r.kept == std::vector<EntityRecord>{es[0], es[2]});

  const auto none = filter_entities(es, {});
  CHECK(none.kept.empty());
  CHECK_FALSE(none.warnings.empty());

  answers["B"] = score_extraction_answer(es[1], "2");
  CHECK(filter_entities(es, answers).kept == es);
}

TEST_CASE("two entities give both orientations") {
  const std::vector<EntityRecord> es{person("A", "a", 1900), person("B", "b", 1800)};
  const auto s = generate_comparison_samples(es, 2, 3, 1);
  REQUIRE(s.size() == 2);
  CHECK(s[0].entity_x.id == s[1].entity_y.id);
  CHECK(s[0].gold != s[1].gold);
  CHECK_THROWS_AS(generate_comparison_samples(es, 3, 3, 1), DatasetError);
}

TEST_CASE("gold labels match a brute-force comparator") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (auto kind : {AttributeKind::birth_year, AttributeKind::death_year, AttributeKind::latitude}) {
      const std::size_t n = 5 + seed;
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> lat(-80, 80);
      std::uniform_int_distribution<int> year(-300, 2000);
      std::vector<EntityRecord> es;
      for (std::size_t i = 0; i < n; ++i) {
        const double v = kind == AttributeKind::latitude ? lat(rng) : year(rng);
        es.push_back(person("E" + std::to_string(i), "n" + std::to_string(i), v, kind));
      }
      const auto all = generate_comparison_samples(es, count_tie_free_pairs(es), seed, 2);

      std::set<std::pair<std::string, std::string>> expected_pairs;
      for (const auto& a : es) {
        for (const auto& b : es) {
          if (a.id == b.id) continue;
          const double ka = kind == AttributeKind::latitude ? std::round(a.value) : a.value;
          const double kb = kind == AttributeKind::latitude ? std::round(b.value) : b.value;
          if (ka != kb) expected_pairs.emplace(a.id, b.id);
        }
      }
      std::set<std::pair<std::string, std::string>> seen;
      for (const auto& s : all) {
        seen.emplace(s.entity_x.id, s.entity_y.id);
        const bool yes = kind == AttributeKind::latitude ? s.entity_x.value > s.entity_y.value
                                                         : s.entity_x.value < s.entity_y.value;
        CHECK(s.gold == (yes ? Answer::Yes : Answer::No));
      }
      CHECK(seen == expected_pairs);
      CHECK(all.size() == expected_pairs.size());
    }
  }
}

TEST_CASE("gold antisymmetry on tie-free pairs") {
  const auto es = years_fixture(15, 4);
  for (const auto& a : es) {
    for (const auto& b : es) {
      if (a.value == b.value) continue;
      for (auto kind : {AttributeKind::birth_year, AttributeKind::latitude}) {
        CHECK(gold_comparison_label(kind, a.value, b.value) ==
              negate(gold_comparison_label(kind, b.value, a.value)));
      }
    }
  }
}

TEST_CASE("sample generation is deterministic and ids are distinct") {
  const auto es = years_fixture(40, 9);
  const auto a = generate_comparison_samples(es, 300, 17, 4);
  const auto b = generate_comparison_samples(es, 300, 17, 4);
  const auto c = generate_comparison_samples(es, 300, 18, 4);
  REQUIRE(a.size() == 300);
  std::set<std::string> ids;
  std::set<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].sample_id == b[i].sample_id);
    CHECK(a[i].entity_x.id == b[i].entity_x.id);
    CHECK(a[i].entity_y.id == b[i].entity_y.id);
    CHECK(a[i].entity_x.id != a[i].entity_y.id);
    CHECK(a[i].template_id == 4);
    ids.insert(a[i].sample_id);
    pairs.emplace(a[i].entity_x.id, a[i].entity_y.id);
  }
  CHECK(ids.size() == 300);
  CHECK(pairs.size() == 300);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].entity_x.id != c[i].entity_x.id;
  CHECK(differs);
}

TEST_CASE("samples JSONL round-trip") {
  testutil::TempDir dir("smp");
  auto s = generate_comparison_samples(years_fixture(10, 1), 20, 5, 1);
  s[0].clean_answer = Answer::Yes;
  s[1].patched_answer = Answer::No;
  write_samples(dir / "s.jsonl", s);
  const auto back = load_samples(dir / "s.jsonl");
  REQUIRE(back.size() == 20);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(back[i].sample_id == s[i].sample_id);
    CHECK(back[i].entity_x == s[i].entity_x);
    CHECK(back[i].entity_y == s[i].entity_y);
    CHECK(back[i].gold == s[i].gold);
    CHECK(back[i].template_id == s[i].template_id);
    CHECK(back[i].clean_answer == s[i].clean_answer);
    CHECK(back[i].patched_answer == s[i].patched_answer);
  }
  write_samples(dir / "t.jsonl", back);
  CHECK(read_all(dir / "s.jsonl") == read_all(dir / "t.jsonl"));

  const auto first = nlohmann::json::parse(read_all(dir / "s.jsonl").substr(0, read_all(dir / "s.jsonl").find('\n')));
  const std::string prompt = first.at("prompt");
  const auto span = first.at("spans").at("entity_x").get<std::vector<std::size_t>>();
  CHECK(prompt.substr(span[0], span[1] - span[0]) == s[0].entity_x.name);

  // A sample whose gold disagrees with its values is rejected.
  auto text = read_all(dir / "s.jsonl");
  const auto gold = std::string("\"gold\":\"") + std::string(to_string(s[0].gold)) + "\"";
  const auto flipped = std::string("\"gold\":\"") + std::string(to_string(negate(s[0].gold))) + "\"";
  text.replace(text.find(gold), gold.size(), flipped);
  std::ofstream(dir / "bad.jsonl") << text;
  CHECK_THROWS_AS(load_samples(dir / "bad.jsonl"), DatasetError);
}

TEST_CASE("random split sizes and determinism") {
  const auto s = generate_comparison_samples(years_fixture(30, 2), 100, 1, 1);
  const auto a = split_samples(s, 0.8, 7, SplitMode::random);
  CHECK(a.train.size() == 80);
  CHECK(a.test.size() == 20);
  const auto b = split_samples(s, 0.8, 7, SplitMode::random);
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test[i].sample_id == b.test[i].sample_id);
  std::set<std::string> all;
  for (const auto& x : a.train) all.insert(x.sample_id);
  for (const auto& x : a.test) all.insert(x.sample_id);
  CHECK(all.size() == 100);
  CHECK_THROWS_AS(split_samples(s, 1.0, 7, SplitMode::random), DatasetError);
}

TEST_CASE("ood split keeps entity sets disjoint") {
  const auto s = generate_comparison_samples(years_fixture(40, 3), 600, 2, 1);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto split = split_samples(s, 0.7, seed, SplitMode::ood_by_entity);
    std::set<std::string> train_entities, test_entities;
    for (const auto& x : split.train) {
      train_entities.insert(x.entity_x.id);
      train_entities.insert(x.entity_y.id);
    }
    for (const auto& x : split.test) {
      test_entities.insert(x.entity_x.id);
      test_entities.insert(x.entity_y.id);
    }
    std::vector<std::string> common;
    std::set_intersection(train_entities.begin(), train_entities.end(), test_entities.begin(),
                          test_entities.end(), std::back_inserter(common));
    CHECK(common.empty());
    CHECK(split.train.size() + split.test.size() + split.n_dropped == s.size());
    CHECK_FALSE(split.test.empty());
  }
}
