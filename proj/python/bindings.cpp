#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <set>

#include "subspace_probe/activation_store.hpp"
#include "subspace_probe/cli.hpp"
#include "subspace_probe/error.hpp"
#include "subspace_probe/intervene.hpp"
#include "subspace_probe/pls.hpp"

namespace py = pybind11;
namespace sp = subspace_probe;

namespace {

sp::Answer answer_of(const std::string& s) {
  if (s == "Yes") return sp::Answer::Yes;
  if (s == "No") return sp::Answer::No;
  throw sp::Error("answers must be 'Yes' or 'No', got '" + s + "'");
}

std::map<std::string, sp::Answer> answers_of(const std::map<std::string, std::string>& in) {
  std::map<std::string, sp::Answer> out;
  for (const auto& [k, v] : in) out[k] = answer_of(v);
  return out;
}

py::dict spec_dict(const sp::InterventionSpec& s) {
  py::dict d;
  d["layer"] = s.layer();
  d["n_layers"] = s.n_layers();
  d["role"] = std::string(sp::to_string(s.role()));
  d["alpha"] = s.alpha();
  d["direction"] = s.direction();
  d["description"] = s.description();
  d["sign_policy"] = std::string(sp::to_string(s.sign_policy));
  if (s.attribute_kind) {
    d["attribute_kind"] = std::string(sp::to_string(*s.attribute_kind));
  } else {
    d["attribute_kind"] = py::none();
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Probing and intervention toolkit core";

  auto base = py::register_exception<sp::Error>(m, "Error");
  py::register_exception<sp::PlsError>(m, "PlsError", base);
  py::register_exception<sp::StoreError>(m, "StoreError", base);
  auto dataset_error = py::register_exception<sp::DatasetError>(m, "DatasetError", base);
  py::register_exception<sp::ParseError>(m, "ParseError", dataset_error);
  py::register_exception<sp::ProbeError>(m, "ProbeError", base);
  py::register_exception<sp::InterventionError>(m, "InterventionError", base);

  py::class_<sp::PlsModel>(m, "PlsModel")
      .def_readonly("n_components", &sp::PlsModel::n_components)
      .def_readonly("x_mean", &sp::PlsModel::x_mean)
      .def_readonly("y_mean", &sp::PlsModel::y_mean)
      .def_readonly("x_weights", &sp::PlsModel::x_weights)
      .def_readonly("x_loadings", &sp::PlsModel::x_loadings)
      .def_readonly("y_score_coefs", &sp::PlsModel::y_score_coefs)
      .def_readonly("coefficients", &sp::PlsModel::coefficients)
      .def_readonly("trained_on", &sp::PlsModel::trained_on)
      .def("__repr__", [](const sp::PlsModel& p) {
        return "<PlsModel k=" + std::to_string(p.n_components) + " d=" + std::to_string(p.dim()) + ">";
      });

  m.def("fit_pls", &sp::fit_pls, py::arg("x"), py::arg("y"), py::arg("n_components"));
  m.def("predict", &sp::predict, py::arg("model"), py::arg("x"));
  m.def("transform", &sp::transform, py::arg("model"), py::arg("x"));
  m.def("r2_score", &sp::r2_score, py::arg("y_true"), py::arg("y_pred"));
  m.def("first_direction", &sp::first_direction, py::arg("model"));
  m.def("save_model", &sp::save_model, py::arg("model"), py::arg("stem"));
  m.def("load_model", &sp::load_model, py::arg("stem"));

  // Store I/O. Tensors are passed as {(layer, role): ndarray}.
  m.def(
      "write_store",
      [](const std::filesystem::path& dir, const std::string& model_id, std::size_t n_layers,
         const std::vector<std::string>& sample_ids, const std::string& attribute_kind,
         const std::map<std::pair<std::size_t, std::string>, Eigen::MatrixXd>& tensors,
         const std::string& creator, bool overwrite) {
        sp::StoreManifest man;
        man.model_id = model_id;
        man.n_layers = n_layers;
        man.sample_ids = sample_ids;
        man.attribute_kind = sp::parse_attribute_kind(attribute_kind);
        man.creator = creator;
        std::map<sp::TensorKey, sp::DataMatrix> t;
        std::set<std::size_t> layers;
        std::set<sp::TokenRole> roles;
        for (const auto& [key, values] : tensors) {
          const auto role = sp::parse_token_role(key.second);
          if (man.d_model == 0) man.d_model = static_cast<std::size_t>(values.cols());
          layers.insert(key.first);
          roles.insert(role);
          t.emplace(sp::TensorKey{key.first, role}, sp::DataMatrix(values, sample_ids));
        }
        man.roles_present.assign(roles.begin(), roles.end());
        if (layers.size() != n_layers || (!layers.empty() && *layers.rbegin() != n_layers - 1)) {
          man.layers.assign(layers.begin(), layers.end());
        }
        sp::write_store(dir, man, t, overwrite);
      },
      py::arg("dir"), py::arg("model_id"), py::arg("n_layers"), py::arg("sample_ids"), py::arg("attribute_kind"),
      py::arg("tensors"), py::arg("creator") = "python", py::arg("overwrite") = false);

  py::class_<sp::ActivationStore>(m, "ActivationStore")
      .def_property_readonly("model_id", [](const sp::ActivationStore& s) { return s.manifest().model_id; })
      .def_property_readonly("d_model", [](const sp::ActivationStore& s) { return s.manifest().d_model; })
      .def_property_readonly("n_layers", [](const sp::ActivationStore& s) { return s.manifest().n_layers; })
      .def_property_readonly("sample_ids", [](const sp::ActivationStore& s) { return s.manifest().sample_ids; })
      .def_property_readonly("layers", [](const sp::ActivationStore& s) { return s.manifest().stored_layers(); })
      .def_property_readonly("roles",
                             [](const sp::ActivationStore& s) {
                               std::vector<std::string> out;
                               for (auto r : s.manifest().roles_present) out.emplace_back(sp::to_string(r));
                               return out;
                             })
      .def(
          "matrix",
          [](const sp::ActivationStore& s, std::size_t layer, const std::string& role) {
            return s.matrix(layer, sp::parse_token_role(role)).values();
          },
          py::arg("layer"), py::arg("role"));

  m.def("read_store", &sp::read_store, py::arg("dir"));
  m.def(
      "validate_store",
      [](const std::filesystem::path& dir) {
        const auto report = sp::validate(dir);
        return py::make_tuple(report.ok(), report.to_text());
      },
      py::arg("dir"), "Returns (ok, report_text).");

  // Interventions.
  m.def(
      "apply_intervention",
      [](const Eigen::VectorXd& h, const Eigen::VectorXd& direction, double alpha) {
        return sp::apply_intervention(h, direction, alpha);
      },
      py::arg("h"), py::arg("direction"), py::arg("alpha"));
  m.def("random_direction", &sp::random_direction, py::arg("d"), py::arg("seed"));
  m.def(
      "effect_of_intervention",
      [](const std::map<std::string, std::string>& clean, const std::map<std::string, std::string>& patched) {
        return sp::effect_of_intervention(answers_of(clean), answers_of(patched));
      },
      py::arg("clean"), py::arg("patched"));
  m.def(
      "emit_intervention_spec",
      [](const std::filesystem::path& path, std::size_t layer, std::size_t n_layers, const std::string& role,
         const Eigen::VectorXd& direction, double alpha, const std::string& description) {
        sp::emit_intervention_spec(
            sp::InterventionSpec(layer, n_layers, sp::parse_token_role(role), direction, alpha, description), path);
      },
      py::arg("path"), py::arg("layer"), py::arg("n_layers"), py::arg("role"), py::arg("direction"),
      py::arg("alpha"), py::arg("description") = "");
  m.def(
      "load_intervention_spec",
      [](const std::filesystem::path& path) { return spec_dict(sp::load_intervention_spec(path)); },
      py::arg("path"));

  // Dataset helpers the adapter needs for answer scoring.
  m.def(
      "parse_numeric_answer",
      [](const std::string& kind, const std::string& text) {
        return sp::parse_numeric_answer(sp::parse_attribute_kind(kind), text);
      },
      py::arg("kind"), py::arg("text"));
  m.def(
      "parse_comparison_answer",
      [](const std::string& text) -> std::optional<std::string> {
        const auto a = sp::parse_comparison_answer(text);
        if (!a) return std::nullopt;
        return std::string(sp::to_string(*a));
      },
      py::arg("text"));
  m.def(
      "gold_comparison_label",
      [](const std::string& kind, double x, double y) {
        return std::string(sp::to_string(sp::gold_comparison_label(sp::parse_attribute_kind(kind), x, y)));
      },
      py::arg("kind"), py::arg("x_value"), py::arg("y_value"));

  m.def(
      "run_cli", [](const std::vector<std::string>& args) { return sp::run_cli(args); }, py::arg("args"),
      py::call_guard<py::gil_scoped_release>(), "Runs a subcommand; returns the exit code.");
}
