#pragma once

// Entities, prompt templates, comparison samples and answer scoring.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace subspace_probe {

enum class AttributeKind { birth_year, death_year, latitude };

std::string_view to_string(AttributeKind kind);
/// Accepts the canonical names and the CLI short forms birth|death|latitude.
AttributeKind parse_attribute_kind(std::string_view text);

enum class Answer { No, Yes };

std::string_view to_string(Answer answer);
Answer parse_answer_label(std::string_view text);  // exactly "Yes" or "No"
inline Answer negate(Answer a) { return a == Answer::Yes ? Answer::No : Answer::Yes; }

struct ValueBounds {
  double year_min = -5000.0;
  double year_max = 2500.0;
};

struct EntityRecord {
  std::string id;
  std::string name;
  AttributeKind attribute_kind = AttributeKind::birth_year;
  double value = 0.0;  // signed year (negative = BCE) or degrees north

  friend bool operator==(const EntityRecord&, const EntityRecord&) = default;
};

void validate_entity(const EntityRecord& entity, const ValueBounds& bounds = {});

/// JSON-lines with keys id, name, attribute_kind, value. Errors carry the
/// 1-based line number; duplicate ids are rejected.
std::vector<EntityRecord> parse_entities(std::istream& in,
                                         const ValueBounds& bounds = {});
std::vector<EntityRecord> load_entities(const std::filesystem::path& path,
                                        const ValueBounds& bounds = {});
void write_entities(const std::filesystem::path& path,
                    const std::vector<EntityRecord>& entities);

/// Replaces values from a JSON-lines file of {id, value}. Unknown ids are an
/// error; the input file stays the ground truth for everything else.
std::vector<EntityRecord> apply_overrides(std::vector<EntityRecord> entities,
                                          const std::filesystem::path& path,
                                          const ValueBounds& bounds = {});

// ---------------------------------------------------------------------------
// Prompt templates

enum class Task { extraction, comparison };

std::string_view to_string(Task task);

struct PromptTemplate {
  int id = 0;  // 1..10 within (task, attribute_kind)
  Task task = Task::comparison;
  AttributeKind attribute_kind = AttributeKind::birth_year;
  std::string text;
  bool reconstructed = false;  // true for the extraction paraphrases
};

/// Comparison templates need `{entity_x}` and `{entity_y}` exactly once each;
/// extraction templates need `{entity}` exactly once.
void validate_template(const PromptTemplate& t);

/// 30 comparison templates plus 30 extraction templates.
const std::vector<PromptTemplate>& builtin_templates();
const PromptTemplate& find_template(Task task, AttributeKind kind, int id);

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);
void save_templates(const std::filesystem::path& path,
                    const std::vector<PromptTemplate>& templates);

/// Half-open byte range into RenderedPrompt::text.
struct TextSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct RenderedPrompt {
  std::string text;
  TextSpan entity_x;                  // also the single entity of extraction prompts
  std::optional<TextSpan> entity_y;
};

/// Number of Unicode code points in the first `byte_offset` bytes of UTF-8
/// text. The JSON prompt files report spans in code points.
std::size_t codepoint_offset(std::string_view text, std::size_t byte_offset);

RenderedPrompt render_comparison_prompt(const PromptTemplate& t,
                                        const EntityRecord& x,
                                        const EntityRecord& y);
RenderedPrompt render_extraction_prompt(const PromptTemplate& t,
                                        const EntityRecord& entity);

// ---------------------------------------------------------------------------
// Labels, parsing and scoring

/// Born/died before: Yes iff x < y. Latitude higher: Yes iff x > y.
/// Ties throw DatasetError.
Answer gold_comparison_label(AttributeKind kind, double x_value, double y_value);

/// Extracts the first number in the text. Years followed by BC/BCE are
/// negated; latitudes accept an optional degree sign and N/S hemisphere,
/// where S negates. Throws ParseError when no number is present.
double parse_numeric_answer(AttributeKind kind, std::string_view raw_text);

/// Canonical rendering that parse_numeric_answer inverts exactly.
std::string format_numeric_answer(AttributeKind kind, double value);

/// Case-insensitive leading yes/no. true/false and correct/incorrect map to
/// Yes/No as used by some templates.
std::optional<Answer> parse_comparison_answer(std::string_view raw_text);

/// Years: exact match. Latitude: both rounded half away from zero.
bool score_extraction(AttributeKind kind, double parsed, double gold);

struct AnswerRecord {
  std::string sample_id;
  std::string raw_text;
  std::optional<double> parsed_value;
  std::optional<Answer> parsed_answer;
  bool correct = false;
};

AnswerRecord score_extraction_answer(const EntityRecord& entity,
                                     std::string raw_text);
AnswerRecord score_comparison_answer(std::string sample_id, Answer gold,
                                     std::string raw_text);

std::vector<AnswerRecord> load_answers(const std::filesystem::path& path);
void write_answers(const std::filesystem::path& path,
                   const std::vector<AnswerRecord>& answers);

struct FilterResult {
  std::vector<EntityRecord> kept;
  std::size_t n_kept = 0;
  std::size_t n_dropped = 0;
  std::vector<std::string> warnings;
};

/// Keeps the entities whose extraction answer (keyed by entity id) is correct.
FilterResult filter_entities(const std::vector<EntityRecord>& entities,
                             const std::map<std::string, AnswerRecord>& answers);

// ---------------------------------------------------------------------------
// Comparison samples

struct ComparisonSample {
  std::string sample_id;
  EntityRecord entity_x;
  EntityRecord entity_y;
  int template_id = 1;
  Answer gold = Answer::No;
  std::optional<Answer> clean_answer;
  std::optional<Answer> patched_answer;

  AttributeKind kind() const noexcept { return entity_x.attribute_kind; }
};

/// Values compared at the task's granularity: years as-is, latitude rounded
/// to whole degrees.
bool values_tie(AttributeKind kind, double a, double b);

/// Number of ordered entity pairs whose values do not tie.
std::size_t count_tie_free_pairs(const std::vector<EntityRecord>& entities);

/// n distinct ordered, tie-free pairs drawn uniformly with the given seed.
std::vector<ComparisonSample> generate_comparison_samples(
    const std::vector<EntityRecord>& entities, std::size_t n, std::uint64_t seed,
    int template_id);

/// One JSON object per line, including the rendered prompt and entity spans
/// in code points.
void write_samples(const std::filesystem::path& path,
                   const std::vector<ComparisonSample>& samples);
std::vector<ComparisonSample> load_samples(const std::filesystem::path& path);

enum class SplitMode { random, ood_by_entity };

SplitMode parse_split_mode(std::string_view text);  // random | ood | ood_by_entity
std::string_view to_string(SplitMode mode);

struct SampleSplit {
  std::vector<ComparisonSample> train;
  std::vector<ComparisonSample> test;
  std::size_t n_dropped = 0;  // ood mode: samples straddling both entity sets
};

SampleSplit split_samples(const std::vector<ComparisonSample>& samples,
                          double train_fraction, std::uint64_t seed,
                          SplitMode mode);

}  // namespace subspace_probe
