#include "subspace_probe/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "subspace_probe/detail/binary_io.hpp"
#include "subspace_probe/error.hpp"

namespace subspace_probe {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::birth_year: return "birth_year";
    case AttributeKind::death_year: return "death_year";
    case AttributeKind::latitude: return "latitude";
  }
  return "unknown";
}

AttributeKind parse_attribute_kind(std::string_view text) {
  if (text == "birth_year" || text == "birth") return AttributeKind::birth_year;
  if (text == "death_year" || text == "death") return AttributeKind::death_year;
  if (text == "latitude") return AttributeKind::latitude;
  throw DatasetError("unknown attribute kind '" + std::string(text) + "'");
}

std::string_view to_string(Answer answer) {
  return answer == Answer::Yes ? "Yes" : "No";
}

Answer parse_answer_label(std::string_view text) {
  if (text == "Yes") return Answer::Yes;
  if (text == "No") return Answer::No;
  throw DatasetError("invalid answer label '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Entities

void validate_entity(const EntityRecord& e, const ValueBounds& bounds) {
  if (e.id.empty()) throw DatasetError("entity with empty id");
  if (e.name.empty()) throw DatasetError("entity " + e.id + " has an empty name");
  if (!std::isfinite(e.value)) {
    throw DatasetError("entity " + e.id + " has a non-finite value");
  }
  if (e.attribute_kind == AttributeKind::latitude) {
    if (e.value < -90.0 || e.value > 90.0) {
      throw DatasetError("entity " + e.id + ": latitude " +
                         detail::format_double(e.value) + " outside [-90, 90]");
    }
  } else if (e.value < bounds.year_min || e.value > bounds.year_max) {
    throw DatasetError("entity " + e.id + ": year " +
                       detail::format_double(e.value) + " outside [" +
                       detail::format_double(bounds.year_min) + ", " +
                       detail::format_double(bounds.year_max) + "]");
  }
}

std::vector<EntityRecord> parse_entities(std::istream& in,
                                         const ValueBounds& bounds) {
  std::vector<EntityRecord> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = "line " + std::to_string(line_no);
    EntityRecord e;
    try {
      const auto obj = json::parse(line);
      e.id = obj.at("id").get<std::string>();
      e.name = obj.at("name").get<std::string>();
      e.attribute_kind = parse_attribute_kind(obj.at("attribute_kind").get<std::string>());
      e.value = obj.at("value").get<double>();
    } catch (const json::exception& ex) {
      throw DatasetError(where + ": malformed entity record: " + ex.what());
    } catch (const DatasetError& ex) {
      throw DatasetError(where + ": " + ex.what());
    }
    try {
      validate_entity(e, bounds);
    } catch (const DatasetError& ex) {
      throw DatasetError(where + ": " + ex.what());
    }
    if (!seen.insert(e.id).second) {
      throw DatasetError(where + ": duplicate entity id '" + e.id + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<EntityRecord> load_entities(const std::filesystem::path& path,
                                        const ValueBounds& bounds) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open entities file " + path.string());
  try {
    return parse_entities(in, bounds);
  } catch (const DatasetError& e) {
    throw DatasetError(path.string() + ": " + e.what());
  }
}

namespace {

ordered_json entity_json(const EntityRecord& e) {
  return {{"id", e.id},
          {"name", e.name},
          {"attribute_kind", to_string(e.attribute_kind)},
          {"value", e.value}};
}

}  // namespace

void write_entities(const std::filesystem::path& path,
                    const std::vector<EntityRecord>& entities) {
  std::string text;
  for (const auto& e : entities) text += entity_json(e).dump() + "\n";
  detail::write_text(path, text);
}

std::vector<EntityRecord> apply_overrides(std::vector<EntityRecord> entities,
                                          const std::filesystem::path& path,
                                          const ValueBounds& bounds) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open overrides file " + path.string());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < entities.size(); ++i) index[entities[i].id] = i;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string id;
    double value = 0.0;
    try {
      const auto obj = json::parse(line);
      id = obj.at("id").get<std::string>();
      value = obj.at("value").get<double>();
    } catch (const json::exception& ex) {
      throw DatasetError(path.string() + " line " + std::to_string(line_no) +
                         ": malformed override: " + ex.what());
    }
    const auto it = index.find(id);
    if (it == index.end()) {
      throw DatasetError(path.string() + " line " + std::to_string(line_no) +
                         ": override for unknown entity '" + id + "'");
    }
    entities[it->second].value = value;
    validate_entity(entities[it->second], bounds);
  }
  return entities;
}

// ---------------------------------------------------------------------------
// Rendering

std::size_t codepoint_offset(std::string_view text, std::size_t byte_offset) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < byte_offset && i < text.size(); ++i) {
    if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) ++count;
  }
  return count;
}

namespace {

/// Substitutes placeholders left to right, recording the span of each value.
RenderedPrompt substitute(const std::string& tpl,
                          const std::vector<std::pair<std::string, std::string>>& values) {
  RenderedPrompt out;
  std::vector<std::optional<TextSpan>> spans(values.size());
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    std::size_t best = std::string::npos;
    std::size_t which = 0;
    for (std::size_t v = 0; v < values.size(); ++v) {
      const auto found = tpl.find(values[v].first, pos);
      if (found < best) {
        best = found;
        which = v;
      }
    }
    if (best == std::string::npos) {
      out.text.append(tpl, pos, std::string::npos);
      break;
    }
    out.text.append(tpl, pos, best - pos);
    const std::size_t begin = out.text.size();
    out.text += values[which].second;
    spans[which] = TextSpan{begin, out.text.size()};
    pos = best + values[which].first.size();
  }
  for (std::size_t v = 0; v < values.size(); ++v) {
    if (!spans[v]) throw DatasetError("placeholder " + values[v].first + " missing from template");
  }
  out.entity_x = *spans[0];
  if (spans.size() > 1) out.entity_y = spans[1];
  return out;
}

}  // namespace

RenderedPrompt render_comparison_prompt(const PromptTemplate& t,
                                        const EntityRecord& x,
                                        const EntityRecord& y) {
  if (t.task != Task::comparison) {
    throw DatasetError("render_comparison_prompt needs a comparison template");
  }
  validate_template(t);
  if (x.id == y.id) {
    throw DatasetError("comparison needs two distinct entities, got '" + x.id + "' twice");
  }
  if (x.attribute_kind != t.attribute_kind || y.attribute_kind != t.attribute_kind) {
    throw DatasetError("attribute kind mismatch between template and entities");
  }
  return substitute(t.text, {{"{entity_x}", x.name}, {"{entity_y}", y.name}});
}

RenderedPrompt render_extraction_prompt(const PromptTemplate& t,
                                        const EntityRecord& entity) {
  if (t.task != Task::extraction) {
    throw DatasetError("render_extraction_prompt needs an extraction template");
  }
  validate_template(t);
  if (entity.attribute_kind != t.attribute_kind) {
    throw DatasetError("attribute kind mismatch between template and entity");
  }
  return substitute(t.text, {{"{entity}", entity.name}});
}

// ---------------------------------------------------------------------------
// Labels

Answer gold_comparison_label(AttributeKind kind, double x_value, double y_value) {
  if (!std::isfinite(x_value) || !std::isfinite(y_value)) {
    throw DatasetError("gold_comparison_label: non-finite value");
  }
  if (x_value == y_value) {
    throw DatasetError("gold_comparison_label: tie at " +
                       detail::format_double(x_value) + " has no defined answer");
  }
  const bool yes = kind == AttributeKind::latitude ? x_value > y_value
                                                   : x_value < y_value;
  return yes ? Answer::Yes : Answer::No;
}

// ---------------------------------------------------------------------------
// Answer parsing

namespace {

char lower(char c) {
  return static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

void skip_spaces(std::string_view s, std::size_t& i) {
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
}

/// Case-insensitive word match at i; the word must not run into letters/digits.
bool match_word(std::string_view s, std::size_t i, std::string_view word) {
  if (i + word.size() > s.size()) return false;
  for (std::size_t k = 0; k < word.size(); ++k) {
    if (lower(s[i + k]) != word[k]) return false;
  }
  const std::size_t end = i + word.size();
  return end == s.size() || !is_alnum(s[end]) || !is_alnum(word.back());
}

constexpr std::string_view kMinusSign = "\xE2\x88\x92";  // U+2212
constexpr std::string_view kDegree = "\xC2\xB0";         // U+00B0
constexpr std::string_view kOrdinal = "\xC2\xBA";        // U+00BA, common stand-in

}  // namespace

double parse_numeric_answer(AttributeKind kind, std::string_view raw) {
  std::size_t i = 0;
  while (i < raw.size() && !std::isdigit(static_cast<unsigned char>(raw[i]))) ++i;
  if (i == raw.size()) {
    throw ParseError("no number in answer '" + std::string(raw) + "'", std::string(raw));
  }
  bool negative = false;
  if (i > 0 && raw[i - 1] == '-') {
    negative = true;
  } else if (i >= kMinusSign.size() &&
             raw.substr(i - kMinusSign.size(), kMinusSign.size()) == kMinusSign) {
    negative = true;
  }
  std::size_t end = i;
  while (end < raw.size() && std::isdigit(static_cast<unsigned char>(raw[end]))) ++end;
  if (end + 1 < raw.size() && raw[end] == '.' &&
      std::isdigit(static_cast<unsigned char>(raw[end + 1]))) {
    ++end;
    while (end < raw.size() && std::isdigit(static_cast<unsigned char>(raw[end]))) ++end;
  }
  double value = 0.0;
  const auto res = std::from_chars(raw.data() + i, raw.data() + end, value);
  if (res.ec != std::errc() || !std::isfinite(value)) {
    throw ParseError("unparsable number in answer '" + std::string(raw) + "'",
                     std::string(raw));
  }
  if (negative) value = -value;

  std::size_t j = end;
  skip_spaces(raw, j);
  if (kind == AttributeKind::latitude) {
    if (raw.substr(j, kDegree.size()) == kDegree) {
      j += kDegree.size();
    } else if (raw.substr(j, kOrdinal.size()) == kOrdinal) {
      j += kOrdinal.size();
    } else if (match_word(raw, j, "degrees")) {
      j += 7;
    } else if (match_word(raw, j, "deg")) {
      j += 3;
    }
    skip_spaces(raw, j);
    if (match_word(raw, j, "south") || match_word(raw, j, "s")) {
      value = -std::abs(value);
    }
  } else {
    if (match_word(raw, j, "bce") || match_word(raw, j, "bc") ||
        match_word(raw, j, "b.c.e.") || match_word(raw, j, "b.c.")) {
      value = -std::abs(value);
    }
  }
  return value;
}

std::string format_numeric_answer(AttributeKind kind, double value) {
  if (kind == AttributeKind::latitude) {
    return detail::format_double(std::abs(value)) + kDegree.data() +
           (value < 0.0 ? " S" : " N");
  }
  if (value < 0.0) return detail::format_double(-value) + " BC";
  return detail::format_double(value);
}

std::optional<Answer> parse_comparison_answer(std::string_view raw) {
  std::size_t i = 0;
  while (i < raw.size() && !is_alnum(raw[i])) ++i;
  if (match_word(raw, i, "incorrect") || match_word(raw, i, "false") ||
      match_word(raw, i, "no")) {
    return Answer::No;
  }
  if (match_word(raw, i, "correct") || match_word(raw, i, "true") ||
      match_word(raw, i, "yes")) {
    return Answer::Yes;
  }
  return std::nullopt;
}

bool score_extraction(AttributeKind kind, double parsed, double gold) {
  if (kind == AttributeKind::latitude) return std::round(parsed) == std::round(gold);
  return parsed == gold;
}

AnswerRecord score_extraction_answer(const EntityRecord& entity,
                                     std::string raw_text) {
  AnswerRecord rec;
  rec.sample_id = entity.id;
  try {
    const double v = parse_numeric_answer(entity.attribute_kind, raw_text);
    rec.parsed_value = v;
    rec.correct = score_extraction(entity.attribute_kind, v, entity.value);
  } catch (const ParseError&) {
    rec.correct = false;
  }
  rec.raw_text = std::move(raw_text);
  return rec;
}

AnswerRecord score_comparison_answer(std::string sample_id, Answer gold,
                                     std::string raw_text) {
  AnswerRecord rec;
  rec.sample_id = std::move(sample_id);
  rec.parsed_answer = parse_comparison_answer(raw_text);
  rec.correct = rec.parsed_answer.has_value() && *rec.parsed_answer == gold;
  rec.raw_text = std::move(raw_text);
  return rec;
}

std::vector<AnswerRecord> load_answers(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open answers file " + path.string());
  std::vector<AnswerRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto obj = json::parse(line);
      AnswerRecord rec;
      rec.sample_id = obj.at("sample_id").get<std::string>();
      rec.raw_text = obj.value("raw_text", "");
      if (obj.contains("parsed") && !obj["parsed"].is_null()) {
        const auto& p = obj["parsed"];
        if (p.is_number()) {
          rec.parsed_value = p.get<double>();
        } else {
          rec.parsed_answer = parse_answer_label(p.get<std::string>());
        }
      }
      rec.correct = obj.value("correct", false);
      if (rec.correct && !rec.parsed_value && !rec.parsed_answer) {
        throw DatasetError("record marked correct without a parsed value");
      }
      out.push_back(std::move(rec));
    } catch (const json::exception& ex) {
      throw DatasetError(path.string() + " line " + std::to_string(line_no) +
                         ": malformed answer record: " + ex.what());
    } catch (const DatasetError& ex) {
      throw DatasetError(path.string() + " line " + std::to_string(line_no) +
                         ": " + ex.what());
    }
  }
  return out;
}

void write_answers(const std::filesystem::path& path,
                   const std::vector<AnswerRecord>& answers) {
  std::string text;
  for (const auto& a : answers) {
    ordered_json obj;
    obj["sample_id"] = a.sample_id;
    obj["raw_text"] = a.raw_text;
    if (a.parsed_value) {
      obj["parsed"] = *a.parsed_value;
    } else if (a.parsed_answer) {
      obj["parsed"] = to_string(*a.parsed_answer);
    } else {
      obj["parsed"] = nullptr;
    }
    obj["correct"] = a.correct;
    text += obj.dump() + "\n";
  }
  detail::write_text(path, text);
}

FilterResult filter_entities(const std::vector<EntityRecord>& entities,
                             const std::map<std::string, AnswerRecord>& answers) {
  FilterResult result;
  if (answers.empty()) {
    result.warnings.push_back("no extraction answers supplied; every entity dropped");
  }
  for (const auto& e : entities) {
    const auto it = answers.find(e.id);
    if (it == answers.end()) {
      if (!answers.empty()) {
        result.warnings.push_back("entity '" + e.id + "' has no answer record; dropped");
      }
      ++result.n_dropped;
      continue;
    }
    if (it->second.correct) {
      result.kept.push_back(e);
      ++result.n_kept;
    } else {
      ++result.n_dropped;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sample generation

bool values_tie(AttributeKind kind, double a, double b) {
  if (kind == AttributeKind::latitude) return std::round(a) == std::round(b);
  return a == b;
}

namespace {

double tie_key(AttributeKind kind, double v) {
  return kind == AttributeKind::latitude ? std::round(v) : v;
}

void require_same_kind(const std::vector<EntityRecord>& entities) {
  for (const auto& e : entities) {
    if (e.attribute_kind != entities.front().attribute_kind) {
      throw DatasetError("entities mix attribute kinds (" +
                         std::string(to_string(entities.front().attribute_kind)) +
                         " and " + std::string(to_string(e.attribute_kind)) + ")");
    }
  }
}

std::string sample_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "cmp-%06zu", index);
  return buf;
}

}  // namespace

std::size_t count_tie_free_pairs(const std::vector<EntityRecord>& entities) {
  const std::size_t n = entities.size();
  if (n < 2) return 0;
  std::map<double, std::size_t> groups;
  for (const auto& e : entities) ++groups[tie_key(e.attribute_kind, e.value)];
  std::size_t tied = 0;
  for (const auto& [key, g] : groups) tied += g * (g - 1);
  return n * (n - 1) - tied;
}

std::vector<ComparisonSample> generate_comparison_samples(
    const std::vector<EntityRecord>& entities, std::size_t n, std::uint64_t seed,
    int template_id) {
  if (entities.size() < 2) throw DatasetError("need at least 2 entities to form pairs");
  require_same_kind(entities);
  const AttributeKind kind = entities.front().attribute_kind;
  find_template(Task::comparison, kind, template_id);
  {
    std::unordered_set<std::string> ids;
    for (const auto& e : entities) {
      if (!ids.insert(e.id).second) throw DatasetError("duplicate entity id '" + e.id + "'");
    }
  }

  const std::size_t available = count_tie_free_pairs(entities);
  if (n > available) {
    throw DatasetError("requested " + std::to_string(n) + " samples but only " +
                       std::to_string(available) + " tie-free ordered pairs exist");
  }

  const std::size_t m = entities.size();
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(n);
  if (2 * n > available) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    all.reserve(available);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (i != j && !values_tie(kind, entities[i].value, entities[j].value)) {
          all.emplace_back(i, j);
        }
      }
    }
    std::shuffle(all.begin(), all.end(), rng);
    pairs.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  } else {
    std::uniform_int_distribution<std::size_t> first(0, m - 1);
    std::uniform_int_distribution<std::size_t> second(0, m - 2);
    std::unordered_set<std::uint64_t> seen;
    while (pairs.size() < n) {
      const std::size_t i = first(rng);
      std::size_t j = second(rng);
      if (j >= i) ++j;
      if (values_tie(kind, entities[i].value, entities[j].value)) continue;
      if (!seen.insert(static_cast<std::uint64_t>(i) * m + j).second) continue;
      pairs.emplace_back(i, j);
    }
  }

  std::vector<ComparisonSample> out;
  out.reserve(n);
  for (std::size_t s = 0; s < pairs.size(); ++s) {
    ComparisonSample sample;
    sample.sample_id = sample_id_for(s);
    sample.entity_x = entities[pairs[s].first];
    sample.entity_y = entities[pairs[s].second];
    sample.template_id = template_id;
    sample.gold = gold_comparison_label(kind, sample.entity_x.value, sample.entity_y.value);
    out.push_back(std::move(sample));
  }
  return out;
}

void write_samples(const std::filesystem::path& path,
                   const std::vector<ComparisonSample>& samples) {
  std::string text;
  for (const auto& s : samples) {
    const auto& tpl = find_template(Task::comparison, s.kind(), s.template_id);
    const auto prompt = render_comparison_prompt(tpl, s.entity_x, s.entity_y);
    auto span = [&](const TextSpan& sp) {
      return ordered_json::array({codepoint_offset(prompt.text, sp.begin),
                                  codepoint_offset(prompt.text, sp.end)});
    };
    ordered_json obj;
    obj["sample_id"] = s.sample_id;
    obj["attribute_kind"] = to_string(s.kind());
    obj["template_id"] = s.template_id;
    obj["entity_x"] = {{"id", s.entity_x.id}, {"name", s.entity_x.name}, {"value", s.entity_x.value}};
    obj["entity_y"] = {{"id", s.entity_y.id}, {"name", s.entity_y.name}, {"value", s.entity_y.value}};
    obj["gold"] = to_string(s.gold);
    obj["prompt"] = prompt.text;
    obj["spans"] = {{"entity_x", span(prompt.entity_x)}, {"entity_y", span(*prompt.entity_y)}};
    if (s.clean_answer) obj["clean_answer"] = to_string(*s.clean_answer);
    if (s.patched_answer) obj["patched_answer"] = to_string(*s.patched_answer);
    text += obj.dump() + "\n";
  }
  detail::write_text(path, text);
}

std::vector<ComparisonSample> load_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open samples file " + path.string());
  std::vector<ComparisonSample> out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + " line " + std::to_string(line_no);
    try {
      const auto obj = json::parse(line);
      ComparisonSample s;
      s.sample_id = obj.at("sample_id").get<std::string>();
      const auto kind = parse_attribute_kind(obj.at("attribute_kind").get<std::string>());
      auto entity = [&](const json& e) {
        return EntityRecord{e.at("id").get<std::string>(), e.at("name").get<std::string>(),
                            kind, e.at("value").get<double>()};
      };
      s.entity_x = entity(obj.at("entity_x"));
      s.entity_y = entity(obj.at("entity_y"));
      s.template_id = obj.at("template_id").get<int>();
      s.gold = parse_answer_label(obj.at("gold").get<std::string>());
      if (obj.contains("clean_answer")) {
        s.clean_answer = parse_answer_label(obj["clean_answer"].get<std::string>());
      }
      if (obj.contains("patched_answer")) {
        s.patched_answer = parse_answer_label(obj["patched_answer"].get<std::string>());
      }
      if (s.entity_x.id == s.entity_y.id) {
        throw DatasetError("sample pairs entity '" + s.entity_x.id + "' with itself");
      }
      if (gold_comparison_label(kind, s.entity_x.value, s.entity_y.value) != s.gold) {
        throw DatasetError("gold label of " + s.sample_id + " contradicts the values");
      }
      if (!seen.insert(s.sample_id).second) {
        throw DatasetError("duplicate sample id '" + s.sample_id + "'");
      }
      out.push_back(std::move(s));
    } catch (const json::exception& ex) {
      throw DatasetError(where + ": malformed sample: " + ex.what());
    } catch (const DatasetError& ex) {
      throw DatasetError(where + ": " + ex.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

SplitMode parse_split_mode(std::string_view text) {
  if (text == "random") return SplitMode::random;
  if (text == "ood" || text == "ood_by_entity") return SplitMode::ood_by_entity;
  throw DatasetError("unknown split mode '" + std::string(text) + "'");
}

std::string_view to_string(SplitMode mode) {
  return mode == SplitMode::random ? "random" : "ood_by_entity";
}

SampleSplit split_samples(const std::vector<ComparisonSample>& samples,
                          double train_fraction, std::uint64_t seed,
                          SplitMode mode) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw DatasetError("train_fraction must lie strictly between 0 and 1");
  }
  std::mt19937_64 rng(seed);
  SampleSplit split;

  if (mode == SplitMode::random) {
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(samples.size())));
    if (n_train == 0 || n_train >= samples.size()) {
      throw DatasetError("degenerate split: " + std::to_string(n_train) + " of " +
                         std::to_string(samples.size()) + " samples in train");
    }
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    for (auto i : train) split.train.push_back(samples[i]);
    for (auto i : test) split.test.push_back(samples[i]);
    return split;
  }

  std::set<std::string> id_set;
  for (const auto& s : samples) {
    id_set.insert(s.entity_x.id);
    id_set.insert(s.entity_y.id);
  }
  std::vector<std::string> ids(id_set.begin(), id_set.end());
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train_entities = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(ids.size())));
  const std::unordered_set<std::string> train_entities(
      ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(std::min(n_train_entities, ids.size())));
  for (const auto& s : samples) {
    const bool x_train = train_entities.count(s.entity_x.id) > 0;
    const bool y_train = train_entities.count(s.entity_y.id) > 0;
    if (x_train && y_train) {
      split.train.push_back(s);
    } else if (!x_train && !y_train) {
      split.test.push_back(s);
    } else {
      ++split.n_dropped;
    }
  }
  if (split.train.empty() || split.test.empty()) {
    throw DatasetError("degenerate entity split: " + std::to_string(split.train.size()) +
                       " train and " + std::to_string(split.test.size()) + " test samples");
  }
  return split;
}

}  // namespace subspace_probe
