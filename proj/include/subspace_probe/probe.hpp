#pragma once

// Per-layer PLS sweeps over an activation store.

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "subspace_probe/activation_store.hpp"
#include "subspace_probe/dataset.hpp"
#include "subspace_probe/pls.hpp"

namespace subspace_probe {

enum class MetricKind { r2, accuracy };

std::string_view to_string(MetricKind kind);

/// Train/test partition over store sample ids.
struct IdSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
};

IdSplit ids_of(const SampleSplit& split);

struct LayerEntry {
  std::size_t layer = 0;
  double train = 0.0;
  double test = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  int k = 0;
  // Classification only: fraction of Yes labels on each side.
  double train_positive_rate = 0.0;
  double test_positive_rate = 0.0;
};

struct LayerSweepResult {
  MetricKind metric_kind = MetricKind::r2;
  AttributeKind attribute_kind = AttributeKind::birth_year;
  TokenRole token_role = TokenRole::entity_y_last;
  std::vector<LayerEntry> entries;  // ascending layer order
  std::vector<PlsModel> models;     // parallel to entries
};

struct SweepOptions {
  int k = 5;
  unsigned threads = 0;  // 0 = hardware concurrency
};

/// Fits PLS(k) per layer on the train rows of `role` and reports R² on train
/// and test rows. pls_core errors are rethrown as ProbeError naming the layer.
LayerSweepResult layer_sweep_regression(const ActivationStore& store,
                                        const std::map<std::string, double>& targets,
                                        TokenRole role, const IdSplit& split,
                                        const SweepOptions& options = {});

/// Yes = 1, No = 0, PLS regression thresholded at 0.5.
LayerSweepResult layer_sweep_classification(const ActivationStore& store,
                                            const std::map<std::string, Answer>& labels,
                                            TokenRole role, const IdSplit& split,
                                            const SweepOptions& options = {});

/// Layer with the highest test metric; ties go to the smaller index.
std::size_t best_layer(const LayerSweepResult& result);

/// `layer,metric_kind,train,test,n_train,n_test,k`
std::string sweep_csv(const LayerSweepResult& result);

/// Plot-ready JSON with the same content plus class balance.
std::string sweep_json(const LayerSweepResult& result);

/// Runs `task(i)` for i in [0, count) on up to `threads` workers. The first
/// exception (by index) is rethrown after all workers finish.
void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& task);

}  // namespace subspace_probe
