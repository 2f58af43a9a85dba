#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "subspace_probe/dataset.hpp"
#include "subspace_probe/error.hpp"

namespace subspace_probe {

namespace {

// Comparison prompts, ids 1..10 per attribute.
const char* const kBirthComparison[10] = {
    "Did {entity_x} come into the world earlier than {entity_y}? Answer with Yes or No.",
    "Is {entity_x}'s birthdate before {entity_y}'s? Respond with Yes or No.",
    "Was {entity_x} born prior to {entity_y}? Output only Yes or No.",
    "Did {entity_x} enter life before {entity_y}? Answer with Yes or No.",
    "Was {entity_x}'s birth earlier than {entity_y}'s? Output only Yes or No.",
    "Was {entity_x} born first compared to {entity_y}? Respond with Yes or No.",
    "Is {entity_x} older than {entity_y}? Reply only with True or False.",
    "Did {entity_x} precede {entity_y} in birth? Respond only with True or False.",
    "Did {entity_x} arrive before {entity_y}? Answer only with True or False.",
    "Is {entity_x} senior to {entity_y}? Reply only with Correct or Incorrect.",
};

const char* const kDeathComparison[10] = {
    "Did {entity_x} die before {entity_y}? Answer with Yes or No.",
    "Did {entity_x} pass away earlier than {entity_y}? Respond with Yes or No.",
    "Was {entity_x}'s death prior to {entity_y}? Provide only Yes or No.",
    "Did {entity_x} pass on before {entity_y}? Answer Yes or No.",
    "Did {entity_x} die first compared to {entity_y}? Respond only with Yes or No.",
    "Was {entity_x}'s death earlier than {entity_y}'s? Answer with Yes or No.",
    "Did {entity_x} precede {entity_y} in death? Reply only with True or False.",
    "Did {entity_x} pass before {entity_y}? Respond only with True or False.",
    "Did {entity_x} die earlier than {entity_y}? Answer only with Yes or No.",
    "Did {entity_x} pass away first compared to {entity_y}? Reply with Correct or Incorrect.",
};

const char* const kLatitudeComparison[10] = {
    "Is {entity_x} located at a higher latitude than {entity_y}? Answer Yes or No.",
    "Is {entity_x} farther north than {entity_y}? Answer Yes or No.",
    "Does {entity_x} have a higher latitude value than {entity_y}? Answer Yes or No.",
    "Comparing latitudes, is {entity_x} north of {entity_y}? Answer Yes or No.",
    "In terms of latitude, is {entity_x} above {entity_y}? Answer Yes or No.",
    "Is the latitude of {entity_x} greater than the latitude of {entity_y}? Answer Yes or No.",
    "Geographically, is {entity_x} at a more northern latitude than {entity_y}? Answer Yes or No.",
    "Does {entity_x} have a more northerly latitude compared to {entity_y}? Answer Yes or No.",
    "Is {entity_x} positioned at a latitude north of {entity_y}? Answer Yes or No.",
    "Considering only latitude, is {entity_x} more northward than {entity_y}? Answer Yes or No.",
};

// Extraction prompts. Only the exemplar questions are known, so these are
// paraphrases built around them and flagged `reconstructed`.
const char* const kBirthExtraction[10] = {
    "Birth year of {entity}?",
    "When was {entity} born? Give the year of birth directly, do not output any additional information.",
    "In what year was {entity} born? Answer with the year only.",
    "What is {entity}'s year of birth? Output only the year.",
    "{entity} was born in which year? Respond with the year only.",
    "Give the birth year of {entity}. Answer with a number only.",
    "Which year was {entity} born in? Reply only with the year.",
    "State the year {entity} was born. Output only the year.",
    "What year did {entity} come into the world? Answer with the year only.",
    "Provide the year of birth of {entity}. Respond only with the year.",
};

const char* const kDeathExtraction[10] = {
    "What is {entity}'s year of death?",
    "Death year of {entity}?",
    "When did {entity} die? Give the year of death directly, do not output any additional information.",
    "In what year did {entity} die? Answer with the year only.",
    "{entity} died in which year? Respond with the year only.",
    "Give the death year of {entity}. Answer with a number only.",
    "Which year did {entity} pass away? Reply only with the year.",
    "State the year {entity} died. Output only the year.",
    "What year did {entity} pass away? Answer with the year only.",
    "Provide the year of death of {entity}. Respond only with the year.",
};

const char* const kLatitudeExtraction[10] = {
    "Latitude of {entity}?",
    "What is the latitude of {entity}? Answer with degrees and hemisphere only.",
    "Give the latitude of {entity} in degrees. Output only the value.",
    "At what latitude is {entity} located? Respond with the latitude only.",
    "What is {entity}'s latitude? Reply only with degrees and N or S.",
    "State the geographic latitude of {entity}. Answer with a number only.",
    "Which latitude does {entity} lie at? Output only the latitude.",
    "Provide the latitude coordinate of {entity}. Respond only with the value.",
    "How many degrees north or south is {entity}? Answer with the latitude only.",
    "Latitude of {entity} in decimal degrees? Output only the number.",
};

std::vector<PromptTemplate> make_builtins() {
  std::vector<PromptTemplate> out;
  auto add = [&](Task task, AttributeKind kind, const char* const (&texts)[10],
                 bool reconstructed) {
    for (int i = 0; i < 10; ++i) {
      PromptTemplate t{i + 1, task, kind, texts[i], reconstructed};
      validate_template(t);
      out.push_back(std::move(t));
    }
  };
  add(Task::comparison, AttributeKind::birth_year, kBirthComparison, false);
  add(Task::comparison, AttributeKind::death_year, kDeathComparison, false);
  add(Task::comparison, AttributeKind::latitude, kLatitudeComparison, false);
  add(Task::extraction, AttributeKind::birth_year, kBirthExtraction, true);
  add(Task::extraction, AttributeKind::death_year, kDeathExtraction, true);
  add(Task::extraction, AttributeKind::latitude, kLatitudeExtraction, true);
  return out;
}

std::size_t count_occurrences(const std::string& text, std::string_view needle) {
  std::size_t count = 0;
  for (auto pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size())) {
    ++count;
  }
  return count;
}

std::string template_label(const PromptTemplate& t) {
  return std::string(to_string(t.task)) + "/" +
         std::string(to_string(t.attribute_kind)) + "#" + std::to_string(t.id);
}

}  // namespace

std::string_view to_string(Task task) {
  return task == Task::extraction ? "extraction" : "comparison";
}

void validate_template(const PromptTemplate& t) {
  if (t.id < 1 || t.id > 10) {
    throw DatasetError("template id " + std::to_string(t.id) + " outside 1..10");
  }
  const auto label = template_label(t);
  if (t.task == Task::comparison) {
    const auto nx = count_occurrences(t.text, "{entity_x}");
    const auto ny = count_occurrences(t.text, "{entity_y}");
    if (nx != 1 || ny != 1) {
      throw DatasetError("template " + label +
                         " must contain {entity_x} and {entity_y} exactly once "
                         "(found " + std::to_string(nx) + " and " +
                         std::to_string(ny) + ")");
    }
  } else {
    const auto n = count_occurrences(t.text, "{entity}");
    if (n != 1) {
      throw DatasetError("template " + label +
                         " must contain {entity} exactly once (found " +
                         std::to_string(n) + ")");
    }
  }
}

const std::vector<PromptTemplate>& builtin_templates() {
  static const std::vector<PromptTemplate> templates = make_builtins();
  return templates;
}

const PromptTemplate& find_template(Task task, AttributeKind kind, int id) {
  for (const auto& t : builtin_templates()) {
    if (t.task == task && t.attribute_kind == kind && t.id == id) return t;
  }
  throw DatasetError("no " + std::string(to_string(task)) + " template " +
                     std::to_string(id) + " for " + std::string(to_string(kind)));
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError("cannot open template file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError("corrupt template file " + path.string() + ": " + e.what());
  }
  std::vector<PromptTemplate> out;
  for (const auto& item : doc.at("templates")) {
    PromptTemplate t;
    t.id = item.at("id").get<int>();
    const auto task = item.at("task").get<std::string>();
    if (task == "comparison") {
      t.task = Task::comparison;
    } else if (task == "extraction") {
      t.task = Task::extraction;
    } else {
      throw DatasetError("unknown task '" + task + "' in " + path.string());
    }
    t.attribute_kind = parse_attribute_kind(item.at("attribute_kind").get<std::string>());
    t.text = item.at("text").get<std::string>();
    t.reconstructed = item.value("reconstructed", false);
    validate_template(t);
    out.push_back(std::move(t));
  }
  return out;
}

void save_templates(const std::filesystem::path& path,
                    const std::vector<PromptTemplate>& templates) {
  nlohmann::ordered_json doc;
  doc["format"] = "prompt-templates-v1";
  doc["templates"] = nlohmann::ordered_json::array();
  for (const auto& t : templates) {
    doc["templates"].push_back({{"id", t.id},
                                {"task", to_string(t.task)},
                                {"attribute_kind", to_string(t.attribute_kind)},
                                {"text", t.text},
                                {"reconstructed", t.reconstructed}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DatasetError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace subspace_probe
