#include "subspace_probe/probe.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "subspace_probe/detail/binary_io.hpp"
#include "subspace_probe/error.hpp"

namespace subspace_probe {

std::string_view to_string(MetricKind kind) {
  return kind == MetricKind::r2 ? "r2" : "accuracy";
}

IdSplit ids_of(const SampleSplit& split) {
  IdSplit out;
  for (const auto& s : split.train) out.train.push_back(s.sample_id);
  for (const auto& s : split.test) out.test.push_back(s.sample_id);
  return out;
}

void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& task) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  std::vector<std::exception_ptr> errors(count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (unsigned w = 0; w < threads; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            task(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

namespace {

std::vector<Eigen::Index> rows_for(const ActivationStore& store,
                                   const std::vector<std::string>& ids,
                                   const char* side) {
  std::vector<Eigen::Index> rows;
  rows.reserve(ids.size());
  for (const auto& id : ids) {
    const auto row = store.row_of(id);
    if (!row) throw ProbeError(std::string(side) + " sample '" + id + "' is not in the store");
    rows.push_back(*row);
  }
  return rows;
}

void check_split(const IdSplit& split) {
  if (split.train.size() < 2 || split.test.empty()) {
    throw ProbeError("split needs at least 2 train and 1 test samples");
  }
  std::unordered_set<std::string> train(split.train.begin(), split.train.end());
  for (const auto& id : split.test) {
    if (train.count(id)) throw ProbeError("sample '" + id + "' is in both train and test");
  }
}

template <typename Map>
void check_total(const ActivationStore& store, const Map& values, const char* what) {
  for (const auto& id : store.manifest().sample_ids) {
    if (!values.count(id)) {
      throw ProbeError(std::string("no ") + what + " for store sample '" + id + "'");
    }
  }
}

Eigen::MatrixXd gather(const Eigen::MatrixXd& x, const std::vector<Eigen::Index>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(rows[i]);
  return out;
}

double accuracy(const Eigen::VectorXd& scores, const Eigen::VectorXd& labels) {
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double predicted = scores(i) >= 0.5 ? 1.0 : 0.0;
    if (predicted == labels(i)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

/// Shared driver: `score` turns (model, X, y) into the metric.
template <typename Score>
LayerSweepResult sweep(const ActivationStore& store, const std::vector<double>& target_by_row,
                       TokenRole role, const IdSplit& split, const SweepOptions& options,
                       MetricKind kind, Score score) {
  check_split(split);
  const auto train_rows = rows_for(store, split.train, "train");
  const auto test_rows = rows_for(store, split.test, "test");

  Eigen::VectorXd y_train(static_cast<Eigen::Index>(train_rows.size()));
  Eigen::VectorXd y_test(static_cast<Eigen::Index>(test_rows.size()));
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    y_train(static_cast<Eigen::Index>(i)) = target_by_row[static_cast<std::size_t>(train_rows[i])];
  }
  for (std::size_t i = 0; i < test_rows.size(); ++i) {
    y_test(static_cast<Eigen::Index>(i)) = target_by_row[static_cast<std::size_t>(test_rows[i])];
  }

  const auto layers = store.manifest().stored_layers();
  LayerSweepResult result;
  result.metric_kind = kind;
  result.attribute_kind = store.manifest().attribute_kind;
  result.token_role = role;
  result.entries.resize(layers.size());
  result.models.resize(layers.size());

  parallel_for(layers.size(), options.threads, [&](std::size_t i) {
    const std::size_t layer = layers[i];
    try {
      const auto x = store.matrix(layer, role);
      const auto x_train = gather(x.values(), train_rows);
      const auto x_test = gather(x.values(), test_rows);
      auto model = fit_pls(x_train, y_train, options.k);
      LayerEntry entry;
      entry.layer = layer;
      entry.k = options.k;
      entry.n_train = train_rows.size();
      entry.n_test = test_rows.size();
      entry.train = score(model, x_train, y_train);
      entry.test = score(model, x_test, y_test);
      entry.train_positive_rate = y_train.mean();
      entry.test_positive_rate = y_test.mean();
      result.entries[i] = entry;
      result.models[i] = std::move(model);
    } catch (const Error& e) {
      throw ProbeError("layer " + std::to_string(layer) + ": " + e.what());
    }
  });
  return result;
}

}  // namespace

LayerSweepResult layer_sweep_regression(const ActivationStore& store,
                                        const std::map<std::string, double>& targets,
                                        TokenRole role, const IdSplit& split,
                                        const SweepOptions& options) {
  check_total(store, targets, "target");
  std::vector<double> by_row;
  for (const auto& id : store.manifest().sample_ids) by_row.push_back(targets.at(id));
  auto result = sweep(store, by_row, role, split, options, MetricKind::r2,
                      [](const PlsModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
                        return r2_score(y, predict(m, x));
                      });
  for (auto& e : result.entries) e.train_positive_rate = e.test_positive_rate = 0.0;
  return result;
}

LayerSweepResult layer_sweep_classification(const ActivationStore& store,
                                            const std::map<std::string, Answer>& labels,
                                            TokenRole role, const IdSplit& split,
                                            const SweepOptions& options) {
  check_total(store, labels, "label");
  std::vector<double> by_row;
  for (const auto& id : store.manifest().sample_ids) {
    by_row.push_back(labels.at(id) == Answer::Yes ? 1.0 : 0.0);
  }
  {
    bool has_yes = false;
    bool has_no = false;
    for (const auto& id : split.train) {
      const auto it = labels.find(id);
      if (it == labels.end()) continue;
      (it->second == Answer::Yes ? has_yes : has_no) = true;
    }
    if (!(has_yes && has_no)) {
      throw ProbeError("training split contains a single class (all " +
                       std::string(has_yes ? "Yes" : "No") + ")");
    }
  }
  return sweep(store, by_row, role, split, options, MetricKind::accuracy,
               [](const PlsModel& m, const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
                 return accuracy(predict(m, x), y);
               });
}

std::size_t best_layer(const LayerSweepResult& result) {
  if (result.entries.empty()) throw ProbeError("best_layer of an empty sweep");
  const LayerEntry* best = &result.entries.front();
  for (const auto& e : result.entries) {
    if (e.test > best->test || (e.test == best->test && e.layer < best->layer)) best = &e;
  }
  return best->layer;
}

std::string sweep_csv(const LayerSweepResult& result) {
  std::string out = "layer,metric_kind,train,test,n_train,n_test,k\n";
  for (const auto& e : result.entries) {
    out += std::to_string(e.layer) + "," + std::string(to_string(result.metric_kind)) + "," +
           detail::format_double(e.train) + "," + detail::format_double(e.test) + "," +
           std::to_string(e.n_train) + "," + std::to_string(e.n_test) + "," +
           std::to_string(e.k) + "\n";
  }
  return out;
}

std::string sweep_json(const LayerSweepResult& result) {
  nlohmann::ordered_json j;
  j["metric_kind"] = to_string(result.metric_kind);
  j["attribute_kind"] = to_string(result.attribute_kind);
  j["token_role"] = to_string(result.token_role);
  j["best_layer"] = result.entries.empty() ? nlohmann::ordered_json(nullptr)
                                           : nlohmann::ordered_json(best_layer(result));
  auto& layers = j["layers"] = nlohmann::ordered_json::array();
  for (const auto& e : result.entries) {
    nlohmann::ordered_json row{{"layer", e.layer}, {"train", e.train}, {"test", e.test},
                               {"n_train", e.n_train}, {"n_test", e.n_test}, {"k", e.k}};
    if (result.metric_kind == MetricKind::accuracy) {
      row["train_positive_rate"] = e.train_positive_rate;
      row["test_positive_rate"] = e.test_positive_rate;
    }
    layers.push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

}  // namespace subspace_probe
