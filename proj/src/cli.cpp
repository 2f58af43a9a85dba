#include "subspace_probe/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "subspace_probe/activation_store.hpp"
#include "subspace_probe/dataset.hpp"
#include "subspace_probe/detail/binary_io.hpp"
#include "subspace_probe/error.hpp"
#include "subspace_probe/intervene.hpp"
#include "subspace_probe/probe.hpp"
#include "subspace_probe/synth_oracle.hpp"

namespace subspace_probe {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Flags shared by the subcommands. Each command reads only what it needs and
// echoes those fields into config.json.
struct RunConfig {
  std::string entities;
  std::string store;
  std::string out;
  std::string samples;
  std::string answers;
  std::string overrides;
  std::string models;
  std::string attr = "birth";
  std::string role = "entity_y_last";
  int k = 5;
  std::uint64_t seed = 0;
  std::string split = "random";
  double train_fraction = 0.8;
  std::string alpha_policy = "score_sigma:2";
  std::vector<double> alpha_grid;
  std::string sign_policy = "against_clean";
  int template_id = 1;
  std::size_t n = 1000;
  unsigned threads = 0;
  // synth
  std::size_t n_entities = 400;
  std::size_t d = 64;
  std::size_t n_layers = 8;
  double noise = 0.1;
  std::string noise_mode = "orthogonal";
};

std::shared_ptr<spdlog::logger> make_logger(const std::string& out_dir) {
  auto console = std::make_shared<spdlog::sinks::stderr_sink_mt>();
  console->set_pattern("%l: %v");
  std::vector<spdlog::sink_ptr> sinks{console};
  if (!out_dir.empty()) {
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>(
        (fs::path(out_dir) / "run.log").string(), true);
    file->set_pattern("[%Y-%m-%d %H:%M:%S.%e] [%l] %v");
    sinks.push_back(file);
  }
  auto logger = std::make_shared<spdlog::logger>("subspace-probe", sinks.begin(), sinks.end());
  auto level = spdlog::level::info;
  if (const char* env = std::getenv("SUBSPACE_PROBE_LOG")) {
    level = spdlog::level::from_str(env);
  }
  logger->set_level(level);
  logger->flush_on(spdlog::level::trace);
  return logger;
}

void write_config(const fs::path& dir, const std::string& command, const ojson& fields) {
  ojson j;
  j["command"] = command;
  for (auto it = fields.begin(); it != fields.end(); ++it) j[it.key()] = it.value();
  detail::write_text(dir / "config.json", j.dump(2) + "\n");
}

unsigned resolve_threads(unsigned requested) {
  return requested == 0 ? std::max(1u, std::thread::hardware_concurrency()) : requested;
}

void write_split(const fs::path& path, const IdSplit& split) {
  ojson j;
  j["train"] = split.train;
  j["test"] = split.test;
  detail::write_text(path, j.dump(2) + "\n");
}

IdSplit read_split(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open split file " + path.string());
  const auto j = nlohmann::json::parse(in);
  return IdSplit{j.at("train").get<std::vector<std::string>>(),
                 j.at("test").get<std::vector<std::string>>()};
}

// dataset ------------------------------------------------------------------

int cmd_dataset(const RunConfig& c, spdlog::logger& log) {
  const AttributeKind kind = parse_attribute_kind(c.attr);
  const SplitMode mode = parse_split_mode(c.split);
  auto all = load_entities(c.entities);
  std::vector<EntityRecord> entities;
  for (auto& e : all) {
    if (e.attribute_kind == kind) entities.push_back(std::move(e));
  }
  log.info("{} entities of kind {}", entities.size(), to_string(kind));
  if (!c.overrides.empty()) entities = apply_overrides(std::move(entities), c.overrides);
  if (!c.answers.empty()) {
    std::map<std::string, AnswerRecord> by_id;
    for (auto& a : load_answers(c.answers)) by_id[a.sample_id] = std::move(a);
    auto filtered = filter_entities(entities, by_id);
    for (const auto& w : filtered.warnings) log.warn("{}", w);
    log.info("kept {} entities, dropped {}", filtered.n_kept, filtered.n_dropped);
    entities = std::move(filtered.kept);
  }

  const fs::path out(c.out);
  const auto samples = generate_comparison_samples(entities, c.n, c.seed, c.template_id);
  write_samples(out / "samples.jsonl", samples);
  write_entities(out / "entities.jsonl", entities);

  std::vector<PromptTemplate> used;
  for (const auto& t : builtin_templates()) {
    if (t.attribute_kind == kind) used.push_back(t);
  }
  save_templates(out / "templates.json", used);

  {
    const auto& t = find_template(Task::extraction, kind, c.template_id);
    std::string lines;
    for (const auto& e : entities) {
      const auto r = render_extraction_prompt(t, e);
      ojson j;
      j["sample_id"] = e.id;
      j["template_id"] = t.id;
      j["prompt"] = r.text;
      j["spans"]["entity"] = {codepoint_offset(r.text, r.entity_x.begin),
                              codepoint_offset(r.text, r.entity_x.end)};
      lines += j.dump() + "\n";
    }
    detail::write_text(out / "extraction_prompts.jsonl", lines);
  }

  const auto split = split_samples(samples, c.train_fraction, c.seed, mode);
  write_split(out / "split.json", ids_of(split));
  if (split.n_dropped > 0) log.info("ood split dropped {} straddling samples", split.n_dropped);
  log.info("wrote {} samples ({} train, {} test) to {}", samples.size(), split.train.size(),
           split.test.size(), out.string());
  return kExitOk;
}

// probe --------------------------------------------------------------------

fs::path default_samples(const RunConfig& c) {
  if (!c.samples.empty()) return c.samples;
  return fs::path(c.store) / "samples.jsonl";
}

int cmd_probe(const RunConfig& c, spdlog::logger& log) {
  const auto report = validate(fs::path(c.store));
  if (!report.ok()) {
    throw StoreError("store " + c.store + " failed validation:\n" + report.to_text());
  }
  const auto store = read_store(c.store);
  const TokenRole role = parse_token_role(c.role);
  const SplitMode mode = parse_split_mode(c.split);

  const auto samples = load_samples(default_samples(c));
  std::map<std::string, double> targets;
  std::map<std::string, Answer> labels;
  bool from_gold = false;
  for (const auto& s : samples) {
    targets[s.sample_id] = role == TokenRole::entity_x_last ? s.entity_x.value : s.entity_y.value;
    if (s.clean_answer) {
      labels[s.sample_id] = *s.clean_answer;
    } else {
      labels[s.sample_id] = s.gold;
      from_gold = true;
    }
  }
  if (!c.answers.empty()) {
    labels.clear();
    from_gold = false;
    for (const auto& a : load_answers(c.answers)) {
      if (a.parsed_answer) labels[a.sample_id] = *a.parsed_answer;
    }
  }
  if (from_gold) log.warn("no clean answers in samples; classification uses gold labels");

  std::vector<ComparisonSample> in_store;
  for (const auto& s : samples) {
    if (store.row_of(s.sample_id)) in_store.push_back(s);
  }
  const auto split = ids_of(split_samples(in_store, c.train_fraction, c.seed, mode));
  const SweepOptions options{c.k, resolve_threads(c.threads)};

  const fs::path out(c.out);
  const fs::path models = out / "models";
  fs::create_directories(models);
  write_split(models / "split.json", split);

  const auto regression = layer_sweep_regression(store, targets, role, split, options);
  detail::write_text(out / "r2_by_layer.csv", sweep_csv(regression));
  detail::write_text(out / "r2_by_layer.json", sweep_json(regression));
  for (std::size_t i = 0; i < regression.entries.size(); ++i) {
    save_model(regression.models[i], models / ("layer" + std::to_string(regression.entries[i].layer)));
    log.debug("layer {}: train R2 {}, test R2 {}", regression.entries[i].layer,
              regression.entries[i].train, regression.entries[i].test);
  }
  log.info("regression sweep on {}: best layer {}", to_string(role), best_layer(regression));

  const auto& roles = store.manifest().roles_present;
  if (std::find(roles.begin(), roles.end(), TokenRole::sequence_last) != roles.end()) {
    const auto cls = layer_sweep_classification(store, labels, TokenRole::sequence_last, split, options);
    detail::write_text(out / "acc_by_layer.csv", sweep_csv(cls));
    detail::write_text(out / "acc_by_layer.json", sweep_json(cls));
    log.info("classification sweep on sequence_last: best layer {}", best_layer(cls));
  } else {
    log.info("store has no sequence_last tensors; classification sweep skipped");
  }
  return kExitOk;
}

// intervene ----------------------------------------------------------------

std::map<std::size_t, PlsModel> load_models(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InterventionError("models directory " + dir.string() + " not found");
  std::map<std::size_t, PlsModel> models;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".json" || name.rfind("layer", 0) != 0) continue;
    const auto digits = name.substr(5, name.size() - 5 - 5);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) continue;
    auto stem = entry.path();
    stem.replace_extension();
    models.emplace(std::stoul(digits), load_model(stem));
  }
  if (models.empty()) throw InterventionError("no layer models in " + dir.string());
  return models;
}

int cmd_intervene(const RunConfig& c, spdlog::logger& log) {
  const fs::path models_dir(c.models);
  const auto models = load_models(models_dir);
  const auto store = read_store(c.store);
  const auto policy = parse_alpha_policy(c.alpha_policy);
  const auto sign = parse_sign_policy(c.sign_policy);
  const fs::path out(c.out);

  IdSplit split;
  if (fs::exists(models_dir / "split.json")) split = read_split(models_dir / "split.json");

  std::vector<double> grid = c.alpha_grid;
  if (grid.empty()) grid.push_back(policy.value);

  const fs::path oracle_path = fs::path(c.store) / "oracle.json";
  const bool synthetic = fs::exists(oracle_path);
  std::optional<SyntheticOracle> oracle;
  if (synthetic) oracle = load_oracle(oracle_path);

  // One spec per layer at the policy's alpha, for the model adapter.
  const fs::path specs = out / "specs";
  fs::create_directories(specs);
  for (const auto& [layer, model] : models) {
    double alpha = policy.value;
    if (policy.kind == AlphaPolicy::Kind::score_sigma) {
      const auto x = store.matrix(layer, TokenRole::entity_y_last);
      std::vector<Eigen::Index> rows;
      for (const auto& id : split.train) {
        if (const auto r = store.row_of(id)) rows.push_back(*r);
      }
      alpha = choose_alpha(model, rows.empty() ? x.values() : x.select_rows(rows).values(), policy);
    }
    InterventionSpec spec(layer, store.manifest().n_layers, TokenRole::entity_y_last,
                          intervention_vector(model), alpha,
                          "PLS first direction, layer " + std::to_string(layer) + ", " +
                              to_string(policy));
    spec.attribute_kind = store.manifest().attribute_kind;
    spec.sign_policy = sign;
    emit_intervention_spec(spec, specs / ("layer" + std::to_string(layer) + ".json"));
  }
  log.info("wrote {} intervention specs to {}", models.size(), specs.string());

  if (!synthetic) {
    log.info("store has no oracle.json; EI sweep needs the model adapter");
    return kExitOk;
  }
  std::vector<EiEntry> rows;
  std::vector<std::string> row_policy;  // grid value of each row, for the JSON
  for (const double value : grid) {
    EiSweepOptions options;
    options.alpha = AlphaPolicy{policy.kind, value};
    options.alpha_ids = split.train;
    options.sign_policy = sign;
    options.seed = c.seed;
    options.threads = resolve_threads(c.threads);
    const auto curve = run_synthetic_ei_sweep(*oracle, store, models, options);
    rows.insert(rows.end(), curve.entries.begin(), curve.entries.end());
    row_policy.resize(rows.size(), to_string(options.alpha));
    for (const auto& e : curve.entries) {
      log.debug("{} layer {}: EI method {}, random {}", to_string(options.alpha), e.layer,
                e.ei_method, e.ei_random);
    }
  }
  detail::write_text(out / "ei_by_layer.csv", ei_csv(rows));
  {
    ojson j;
    j["alpha_policy"] = c.alpha_policy;
    j["sign_policy"] = to_string(sign);
    auto& arr = j["layers"] = ojson::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& e = rows[i];
      arr.push_back({{"policy", row_policy[i]}, {"layer", e.layer}, {"ei_method", e.ei_method},
                     {"ei_random", e.ei_random}, {"alpha", e.alpha}, {"n", e.n}});
    }
    detail::write_text(out / "ei_by_layer.json", j.dump(2) + "\n");
  }
  log.info("EI sweep over {} layers x {} alphas written", models.size(), grid.size());
  return kExitOk;
}

// validate -----------------------------------------------------------------

int cmd_validate(const RunConfig& c, spdlog::logger& log) {
  const auto report = validate(fs::path(c.store));
  std::cout << report.to_text();
  if (!c.out.empty()) detail::write_text(fs::path(c.out) / "validation.txt", report.to_text());
  if (!report.ok()) {
    log.error("store {} has {} issue(s)", c.store, report.issues.size());
    return kExitValidate;
  }
  return kExitOk;
}

// synth --------------------------------------------------------------------

int cmd_synth(const RunConfig& c, spdlog::logger& log) {
  const AttributeKind kind = parse_attribute_kind(c.attr);
  if (c.noise_mode != "orthogonal" && c.noise_mode != "isotropic") {
    throw DatasetError("noise mode must be orthogonal or isotropic");
  }
  const fs::path out(c.out);
  const auto entities = synthetic_entities(kind, c.n_entities, c.seed);
  auto samples = generate_comparison_samples(entities, c.n, c.seed, c.template_id);

  std::vector<double> values;
  for (const auto& e : entities) values.push_back(e.value);
  OracleConfig oc;
  oc.d = c.d;
  oc.n_layers = c.n_layers;
  oc.attribute_kind = kind;
  oc.noise_sigma = c.noise;
  oc.noise_mode = c.noise_mode == "isotropic" ? NoiseMode::isotropic : NoiseMode::orthogonal;
  oc.seed = c.seed;
  const auto oracle = make_oracle(oc, values);

  const fs::path store_dir = out / "store";
  const auto synth = generate_synthetic_store(oracle, samples, store_dir, true);
  for (auto& s : samples) s.clean_answer = synth.answers.at(s.sample_id);
  write_samples(store_dir / "samples.jsonl", samples);
  write_entities(out / "entities.jsonl", entities);
  log.info("synthetic store with {} samples, d={}, {} layers (planted [{}, {})) at {}",
           samples.size(), oracle.d, oracle.n_layers, oracle.planted_begin, oracle.planted_end,
           store_dir.string());
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Linear probes and activation interventions for entity attributes",
               "subspace-probe"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  RunConfig c;

  auto* dataset = app.add_subcommand("dataset", "Render prompts and generate comparison samples");
  dataset->add_option("--entities", c.entities, "Entities JSONL")->required();
  dataset->add_option("--out", c.out, "Output directory")->required();
  dataset->add_option("--attr", c.attr, "birth | death | latitude");
  dataset->add_option("--n", c.n, "Number of comparison samples");
  dataset->add_option("--seed", c.seed);
  dataset->add_option("--template-id", c.template_id, "Template 1..10");
  dataset->add_option("--split", c.split, "random | ood");
  dataset->add_option("--train-fraction", c.train_fraction);
  dataset->add_option("--overrides", c.overrides, "JSONL of {id, value} corrections");
  dataset->add_option("--answers", c.answers, "Extraction answers; drops entities answered wrong");

  auto* probe = app.add_subcommand("probe", "Per-layer PLS regression and classification sweeps");
  probe->add_option("--store", c.store, "Activation store directory")->required();
  probe->add_option("--out", c.out, "Output directory")->required();
  probe->add_option("--samples", c.samples, "Samples JSONL (default <store>/samples.jsonl)");
  probe->add_option("--answers", c.answers, "Clean comparison answers JSONL for classification");
  probe->add_option("--role", c.role, "Token role for regression");
  probe->add_option("--k", c.k, "PLS components");
  probe->add_option("--seed", c.seed);
  probe->add_option("--split", c.split, "random | ood");
  probe->add_option("--train-fraction", c.train_fraction);
  probe->add_option("--threads", c.threads, "Worker threads (0 = all cores)");

  auto* intervene = app.add_subcommand(
      "intervene",
      "Emit intervention specs and run the EI sweep on synthetic stores.\n"
      "Positive alpha moves entity_y's predicted value up. With --sign-policy against_clean\n"
      "the sign is chosen per sample to contradict the clean answer: for birth/death a Yes\n"
      "(x earlier) pulls y earlier, for latitude a Yes (x higher) pushes y higher.");
  intervene->add_option("--store", c.store, "Activation store directory")->required();
  intervene->add_option("--models", c.models, "Directory of layer models from `probe`")->required();
  intervene->add_option("--out", c.out, "Output directory")->required();
  intervene->add_option("--alpha-policy", c.alpha_policy, "fixed:C or score_sigma:M");
  intervene->add_option("--alpha-grid", c.alpha_grid, "Values of C or M to sweep")->delimiter(',');
  intervene->add_option("--sign-policy", c.sign_policy, "against_clean | fixed");
  intervene->add_option("--seed", c.seed, "Seed for random baseline directions");
  intervene->add_option("--threads", c.threads);

  auto* validate_cmd = app.add_subcommand("validate", "Check a store for structural problems and NaNs");
  validate_cmd->add_option("--store", c.store, "Activation store directory")->required();
  validate_cmd->add_option("--out", c.out, "Optional directory for validation.txt");

  auto* synth = app.add_subcommand("synth", "Write a synthetic store with a planted attribute direction");
  synth->add_option("--out", c.out, "Output directory")->required();
  synth->add_option("--attr", c.attr);
  synth->add_option("--n", c.n, "Number of comparison samples");
  synth->add_option("--n-entities", c.n_entities);
  synth->add_option("--d", c.d, "Hidden size");
  synth->add_option("--layers", c.n_layers);
  synth->add_option("--noise", c.noise, "Noise std sigma");
  synth->add_option("--noise-mode", c.noise_mode, "orthogonal | isotropic");
  synth->add_option("--template-id", c.template_id);
  synth->add_option("--seed", c.seed);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  struct Command {
    CLI::App* app;
    int exit_code;
    int (*run)(const RunConfig&, spdlog::logger&);
    const char* name;
  };
  const Command commands[] = {
      {dataset, kExitDataset, cmd_dataset, "dataset"},
      {probe, kExitProbe, cmd_probe, "probe"},
      {intervene, kExitIntervene, cmd_intervene, "intervene"},
      {validate_cmd, kExitValidate, cmd_validate, "validate"},
      {synth, kExitDataset, cmd_synth, "synth"},
  };
  for (const auto& cmd : commands) {
    if (!cmd.app->parsed()) continue;

    ojson fields;
    for (const auto* opt : cmd.app->get_options()) {
      if (opt->get_name() == "--help") continue;
      const auto results = opt->results();
      const std::string key = opt->get_name().substr(2);
      if (opt->get_name() == "--alpha-grid") {
        fields[key] = c.alpha_grid;
      } else if (!results.empty()) {
        fields[key] = results.back();
      } else {
        fields[key] = opt->get_default_str();
      }
    }

    std::shared_ptr<spdlog::logger> log;
    try {
      if (!c.out.empty()) {
        fs::create_directories(c.out);
        write_config(c.out, cmd.name, fields);
      }
      log = make_logger(c.out);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return cmd.exit_code;
    }
    try {
      return cmd.run(c, *log);
    } catch (const std::exception& e) {
      log->error("{}", e.what());
      return cmd.exit_code;
    }
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace subspace_probe
