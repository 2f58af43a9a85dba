#include "subspace_probe/intervene.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "subspace_probe/detail/binary_io.hpp"
#include "subspace_probe/error.hpp"
#include "subspace_probe/probe.hpp"

namespace subspace_probe {

std::string_view to_string(SignPolicy policy) {
  return policy == SignPolicy::against_clean ? "against_clean" : "fixed";
}

SignPolicy parse_sign_policy(std::string_view text) {
  if (text == "against_clean") return SignPolicy::against_clean;
  if (text == "fixed") return SignPolicy::fixed;
  throw InterventionError("unknown sign policy '" + std::string(text) +
                          "' (expected against_clean or fixed)");
}

InterventionSpec::InterventionSpec(std::size_t layer, std::size_t n_layers, TokenRole role,
                                   Eigen::VectorXd direction, double alpha,
                                   std::string description)
    : layer_(layer),
      n_layers_(n_layers),
      role_(role),
      direction_(std::move(direction)),
      alpha_(alpha),
      description_(std::move(description)) {
  if (layer_ >= n_layers_) {
    throw InterventionError("intervention layer " + std::to_string(layer_) +
                            " out of range [0, " + std::to_string(n_layers_) + ")");
  }
  if (direction_.size() == 0) throw InterventionError("intervention direction is empty");
  if (!direction_.allFinite()) throw InterventionError("intervention direction is not finite");
  const double norm = direction_.norm();
  if (std::abs(norm - 1.0) > 1e-10) {
    throw InterventionError("intervention direction must have unit norm (got " +
                            detail::format_double(norm) + ")");
  }
  if (!std::isfinite(alpha_)) throw InterventionError("alpha is not finite");
}

AlphaPolicy parse_alpha_policy(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw InterventionError("alpha policy '" + std::string(text) +
                            "' must look like fixed:C or score_sigma:M");
  }
  const auto name = text.substr(0, colon);
  const std::string number(text.substr(colon + 1));
  double value = 0.0;
  try {
    std::size_t used = 0;
    value = std::stod(number, &used);
    if (used != number.size()) throw std::invalid_argument("trailing text");
  } catch (const std::exception&) {
    throw InterventionError("alpha policy '" + std::string(text) + "' has a bad number");
  }
  if (!std::isfinite(value)) throw InterventionError("alpha policy value is not finite");
  if (name == "fixed") return AlphaPolicy::fixed(value);
  if (name == "score_sigma" || name == "sigma") return AlphaPolicy::score_sigma(value);
  throw InterventionError("unknown alpha policy '" + std::string(name) + "'");
}

std::string to_string(const AlphaPolicy& policy) {
  return std::string(policy.kind == AlphaPolicy::Kind::fixed ? "fixed:" : "score_sigma:") +
         detail::format_double(policy.value);
}

Eigen::VectorXd intervention_vector(const PlsModel& model) {
  try {
    return first_direction(model);
  } catch (const PlsError& e) {
    throw InterventionError(e.what());
  }
}

double choose_alpha(const PlsModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x_train,
                    const AlphaPolicy& policy) {
  if (!model.fitted()) throw InterventionError("PLS model is not fitted");
  if (policy.kind == AlphaPolicy::Kind::fixed) return policy.value;
  if (x_train.rows() == 0) throw InterventionError("score_sigma needs training rows");
  if (x_train.cols() != model.dim()) {
    throw InterventionError("score_sigma: training rows have " + std::to_string(x_train.cols()) +
                            " columns, model expects " + std::to_string(model.dim()));
  }
  const Eigen::VectorXd w1 = model.x_weights.col(0);
  const Eigen::VectorXd t1 = (x_train.rowwise() - model.x_mean.transpose()) * w1;
  const double mean = t1.mean();
  const double sd = std::sqrt((t1.array() - mean).square().mean());
  if (!(sd > 0.0)) throw InterventionError("score_sigma: first-component scores have zero spread");
  return policy.value * sd;
}

Eigen::VectorXd apply_intervention(const Eigen::Ref<const Eigen::VectorXd>& h,
                                   const Eigen::Ref<const Eigen::VectorXd>& direction,
                                   double alpha) {
  if (h.size() != direction.size()) {
    throw InterventionError("hidden state has dimension " + std::to_string(h.size()) +
                            ", direction has " + std::to_string(direction.size()));
  }
  return h + alpha * direction;
}

Eigen::VectorXd apply_intervention(const Eigen::Ref<const Eigen::VectorXd>& h,
                                   const InterventionSpec& spec) {
  return apply_intervention(h, spec.direction(), spec.alpha());
}

Eigen::VectorXd random_direction(std::size_t d, std::uint64_t seed) {
  if (d == 0) throw InterventionError("random_direction needs d >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  do {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

double effect_of_intervention(const std::map<std::string, Answer>& clean,
                              const std::map<std::string, Answer>& patched) {
  if (clean.empty()) throw InterventionError("effect_of_intervention: no samples");
  if (clean.size() != patched.size()) {
    throw InterventionError("effect_of_intervention: " + std::to_string(clean.size()) +
                            " clean answers vs " + std::to_string(patched.size()) + " patched");
  }
  std::size_t flipped = 0;
  auto it = patched.begin();
  for (const auto& [id, answer] : clean) {
    if (it->first != id) {
      throw InterventionError("effect_of_intervention: sample '" + id +
                              "' has no patched answer");
    }
    if (it->second != answer) ++flipped;
    ++it;
  }
  return static_cast<double>(flipped) / static_cast<double>(clean.size());
}

double flip_sign(AttributeKind kind, Answer clean) {
  // Yes for years means x < y: pull y down. Yes for latitude means x > y: push y up.
  const bool yes = clean == Answer::Yes;
  if (kind == AttributeKind::latitude) return yes ? 1.0 : -1.0;
  return yes ? -1.0 : 1.0;
}

std::string ei_csv(const std::vector<EiEntry>& entries) {
  std::string out = "layer,ei_method,ei_random,alpha,n\n";
  for (const auto& e : entries) {
    out += std::to_string(e.layer) + "," + detail::format_double(e.ei_method) + "," +
           detail::format_double(e.ei_random) + "," + detail::format_double(e.alpha) + "," +
           std::to_string(e.n) + "\n";
  }
  return out;
}

namespace {

std::vector<Eigen::Index> rows_of(const ActivationStore& store,
                                  const std::vector<std::string>& ids) {
  std::vector<Eigen::Index> rows;
  if (ids.empty()) {
    const auto n = static_cast<Eigen::Index>(store.manifest().n_samples());
    for (Eigen::Index i = 0; i < n; ++i) rows.push_back(i);
    return rows;
  }
  for (const auto& id : ids) {
    const auto row = store.row_of(id);
    if (!row) throw InterventionError("sample '" + id + "' is not in the store");
    rows.push_back(*row);
  }
  return rows;
}

}  // namespace

EiCurve run_synthetic_ei_sweep(const SyntheticOracle& oracle, const ActivationStore& store,
                               const std::map<std::size_t, PlsModel>& models,
                               const EiSweepOptions& options) {
  if (models.empty()) throw InterventionError("EI sweep needs at least one layer model");
  const auto& manifest = store.manifest();
  if (manifest.d_model != oracle.d || manifest.n_layers != oracle.n_layers) {
    throw InterventionError("store shape (d=" + std::to_string(manifest.d_model) +
                            ", layers=" + std::to_string(manifest.n_layers) +
                            ") does not match the oracle (d=" + std::to_string(oracle.d) +
                            ", layers=" + std::to_string(oracle.n_layers) + ")");
  }
  const AttributeKind kind = oracle.attribute_kind;
  const auto eval_rows = rows_of(store, options.eval_ids);
  const auto alpha_rows = rows_of(store, options.alpha_ids);
  const auto& ids = manifest.sample_ids;

  const std::size_t readout = oracle.readout_layer();
  const auto hx = store.matrix(readout, TokenRole::entity_x_last);
  const auto hy = store.matrix(readout, TokenRole::entity_y_last);

  std::map<std::string, Answer> clean;
  for (const auto r : eval_rows) {
    clean[ids[static_cast<std::size_t>(r)]] =
        answer_comparison(oracle, hx.values().row(r).transpose(), hy.values().row(r).transpose(), kind);
  }

  std::vector<std::pair<std::size_t, const PlsModel*>> work(models.size());
  {
    std::size_t i = 0;
    for (const auto& [layer, model] : models) work[i++] = {layer, &model};
  }
  EiCurve curve;
  curve.entries.resize(work.size());

  parallel_for(work.size(), options.threads, [&](std::size_t i) {
    const auto [layer, model] = work[i];
    if (layer >= oracle.n_layers) {
      throw InterventionError("model for layer " + std::to_string(layer) +
                              " but the oracle has " + std::to_string(oracle.n_layers) + " layers");
    }
    if (model->dim() != static_cast<Eigen::Index>(oracle.d)) {
      throw InterventionError("layer " + std::to_string(layer) + " model has dimension " +
                              std::to_string(model->dim()));
    }
    const Eigen::VectorXd v = intervention_vector(*model);
    const Eigen::VectorXd r = random_direction(oracle.d, mix_seed(options.seed, layer));

    double alpha = options.alpha.value;
    if (options.alpha.kind == AlphaPolicy::Kind::score_sigma) {
      const auto x = store.matrix(layer, TokenRole::entity_y_last);
      Eigen::MatrixXd x_train(static_cast<Eigen::Index>(alpha_rows.size()), x.cols());
      for (std::size_t j = 0; j < alpha_rows.size(); ++j) {
        x_train.row(static_cast<Eigen::Index>(j)) = x.values().row(alpha_rows[j]);
      }
      alpha = choose_alpha(*model, x_train, options.alpha);
    }

    std::map<std::string, Answer> patched_method = clean;
    std::map<std::string, Answer> patched_random = clean;
    if (oracle.is_planted(layer) && alpha != 0.0) {
      for (const auto row : eval_rows) {
        const auto& id = ids[static_cast<std::size_t>(row)];
        const double sign =
            options.sign_policy == SignPolicy::against_clean ? flip_sign(kind, clean.at(id)) : 1.0;
        const Eigen::VectorXd x = hx.values().row(row).transpose();
        const Eigen::VectorXd y = hy.values().row(row).transpose();
        patched_method[id] = answer_comparison(oracle, x, apply_intervention(y, v, sign * alpha), kind);
        patched_random[id] = answer_comparison(oracle, x, apply_intervention(y, r, sign * alpha), kind);
      }
    }
    EiEntry entry;
    entry.layer = layer;
    entry.alpha = alpha;
    entry.n = eval_rows.size();
    entry.ei_method = effect_of_intervention(clean, patched_method);
    entry.ei_random = effect_of_intervention(clean, patched_random);
    curve.entries[i] = entry;
  });
  return curve;
}

namespace detail {

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const char> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto b = (static_cast<unsigned char>(bytes[i]) << 16) |
                   (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(b >> 18) & 63];
    out += kAlphabet[(b >> 12) & 63];
    out += kAlphabet[(b >> 6) & 63];
    out += kAlphabet[b & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    unsigned b = static_cast<unsigned char>(bytes[i]) << 16;
    if (rest == 2) b |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(b >> 18) & 63];
    out += kAlphabet[(b >> 12) & 63];
    out += rest == 2 ? kAlphabet[(b >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<char> base64_decode(std::string_view text) {
  std::array<int, 256> lookup{};
  lookup.fill(-1);
  for (int i = 0; i < 64; ++i) lookup[static_cast<unsigned char>(kAlphabet[i])] = i;
  if (text.size() % 4 != 0) throw InterventionError("base64 length is not a multiple of 4");
  std::vector<char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    unsigned b = 0;
    int pad = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      const char c = text[i + j];
      if (c == '=' && i + 4 == text.size() && j >= 2) {
        ++pad;
        b <<= 6;
        continue;
      }
      const int value = lookup[static_cast<unsigned char>(c)];
      if (value < 0 || pad > 0) throw InterventionError("invalid base64 character at offset " + std::to_string(i + j));
      b = (b << 6) | static_cast<unsigned>(value);
    }
    out.push_back(static_cast<char>((b >> 16) & 255));
    if (pad < 2) out.push_back(static_cast<char>((b >> 8) & 255));
    if (pad < 1) out.push_back(static_cast<char>(b & 255));
  }
  return out;
}

}  // namespace detail

void emit_intervention_spec(const InterventionSpec& spec, const std::filesystem::path& path) {
  std::vector<float> v32(static_cast<std::size_t>(spec.direction().size()));
  for (std::size_t i = 0; i < v32.size(); ++i) {
    v32[i] = static_cast<float>(spec.direction()(static_cast<Eigen::Index>(i)));
  }
  std::vector<char> bytes;
  detail::append_le<float>(bytes, std::span<const float>(v32));

  nlohmann::ordered_json j;
  j["format"] = "intervention-spec-v1";
  j["layer"] = spec.layer();
  j["n_layers"] = spec.n_layers();
  j["role"] = to_string(spec.role());
  j["alpha"] = spec.alpha();
  j["sign_policy"] = to_string(spec.sign_policy);
  if (spec.attribute_kind) j["attribute_kind"] = to_string(*spec.attribute_kind);
  j["d"] = v32.size();
  j["dtype"] = "f32";
  j["endianness"] = "little";
  j["direction_b64"] = detail::base64_encode(bytes);
  j["description"] = spec.description();
  try {
    detail::write_text(path, j.dump(2) + "\n");
  } catch (const Error& e) {
    throw InterventionError(e.what());
  }
}

InterventionSpec load_intervention_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InterventionError("cannot open intervention spec " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.value("format", "") != "intervention-spec-v1") {
      throw InterventionError("unsupported intervention spec format in " + path.string());
    }
    const auto d = j.at("d").get<std::size_t>();
    const auto bytes = detail::base64_decode(j.at("direction_b64").get<std::string>());
    if (bytes.size() != d * sizeof(float)) {
      throw InterventionError("direction has " + std::to_string(bytes.size()) +
                              " bytes, expected " + std::to_string(d * sizeof(float)));
    }
    const auto v32 = detail::decode_le<float>(bytes, 0, d);
    Eigen::VectorXd v(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i) v(static_cast<Eigen::Index>(i)) = v32[i];
    const double norm = v.norm();
    if (std::abs(norm - 1.0) > 1e-5) {
      throw InterventionError("stored direction is not unit norm (" +
                              detail::format_double(norm) + ")");
    }
    v /= norm;
    InterventionSpec spec(j.at("layer").get<std::size_t>(), j.at("n_layers").get<std::size_t>(),
                          parse_token_role(j.at("role").get<std::string>()), std::move(v),
                          j.at("alpha").get<double>(), j.value("description", ""));
    spec.sign_policy = parse_sign_policy(j.value("sign_policy", "fixed"));
    if (j.contains("attribute_kind")) {
      spec.attribute_kind = parse_attribute_kind(j.at("attribute_kind").get<std::string>());
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InterventionError("corrupt intervention spec " + path.string() + ": " + e.what());
  } catch (const InterventionError&) {
    throw;
  } catch (const Error& e) {
    throw InterventionError(e.what());
  }
}

}  // namespace subspace_probe
