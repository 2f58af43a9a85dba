#include <doctest.h>

#include <cmath>
#include <set>

#include "subspace_probe/error.hpp"
#include "subspace_probe/intervene.hpp"
#include "subspace_probe/probe.hpp"
#include "subspace_probe/synth_oracle.hpp"
#include "synth_fixture.hpp"

using namespace subspace_probe;

namespace {

SyntheticOracle oracle_with(double noise, NoiseMode mode = NoiseMode::orthogonal,
                            AttributeKind kind = AttributeKind::birth_year) {
  OracleConfig c;
  c.d = 32;
  c.n_layers = 6;
  c.attribute_kind = kind;
  c.noise_sigma = noise;
  c.noise_mode = mode;
  c.seed = 11;
  return make_oracle(c, {1600, 1700, 1800, 1900, 2000});
}

}  // namespace

TEST_CASE("oracle construction") {
  const auto o = oracle_with(0.1);
  CHECK(o.planted_direction.norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(o.comparison_direction.norm() == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(std::abs(o.planted_direction.dot(o.comparison_direction)) < 1e-14);
  CHECK(o.planted_begin == 0);
  CHECK(o.planted_end == 3);
  CHECK(o.readout_layer() == 2);
  // population std of {1600..2000 step 100} is sqrt(20000)
  CHECK(o.scale == doctest::Approx(1.0 / std::sqrt(20000.0)));
  CHECK(o.offset == doctest::Approx(-1800.0 / std::sqrt(20000.0)));
  CHECK_THROWS_AS(make_oracle(OracleConfig{}, {5.0, 5.0}), Error);
}

TEST_CASE("sigma 0: planted projection equals s*value + b") {
  const auto o = oracle_with(0.0);
  for (double v : {-1393.0, 0.0, 1643.0, 1879.0}) {
    for (std::size_t layer = 0; layer < 3; ++layer) {
      const auto h = embed_entity(o, v, layer, 5);
      CHECK(h.dot(o.planted_direction) == doctest::Approx(o.scale * v + o.offset).epsilon(1e-13));
      CHECK(o.decode(h) == doctest::Approx(v).epsilon(1e-12));
    }
  }
  CHECK(embed_entity(o, 1643, 1).dot(o.planted_direction) <
        embed_entity(o, 1879, 1).dot(o.planted_direction));
}

TEST_CASE("orthogonal noise leaves the planted coordinate exact") {
  const auto o = oracle_with(0.5);
  const auto h = embed_entity(o, 1750, 0, 3);
  CHECK(o.decode(h) == doctest::Approx(1750).epsilon(1e-12));
  const Eigen::VectorXd noise = h - (o.scale * 1750 + o.offset) * o.planted_direction;
  CHECK(noise.norm() > 0.5);
}

TEST_CASE("embedding is deterministic per (seed, value, layer, salt)") {
  const auto o = oracle_with(0.1);
  CHECK(embed_entity(o, 1800, 1, 9) == embed_entity(o, 1800, 1, 9));
  CHECK(embed_entity(o, 1800, 1, 9) != embed_entity(o, 1800, 1, 10));
  CHECK(embed_entity(o, 1800, 1, 9) != embed_entity(o, 1800, 2, 9));
  CHECK_THROWS_AS(embed_entity(o, 1800, 6), Error);
}

TEST_CASE("non-planted layers match the noise null") {
  const auto o = oracle_with(0.1);
  const int draws = 1000;
  double sum = 0.0;
  double sq = 0.0;
  double norm_sq = 0.0;
  for (int i = 0; i < draws; ++i) {
    const auto h = embed_entity(o, 1800.0 + i, 4, static_cast<std::uint64_t>(i));
    const double p = h.dot(o.planted_direction);
    sum += p;
    sq += p * p;
    norm_sq += h.squaredNorm();
  }
  const double mean = sum / draws;
  const double sd = std::sqrt(sq / draws - mean * mean);
  // <h, u> ~ N(0, null_sigma^2); mean within 4 standard errors, sd within 10%.
  CHECK(std::abs(mean) < 4.0 * o.null_sigma / std::sqrt(static_cast<double>(draws)));
  CHECK(sd == doctest::Approx(o.null_sigma).epsilon(0.1));
  // Norm statistics match planted layers with unit-variance codes.
  const double expected = 1.0 + o.noise_sigma * o.noise_sigma * (static_cast<double>(o.d) - 1.0);
  CHECK(norm_sq / draws == doctest::Approx(expected).epsilon(0.05));
}

TEST_CASE("answer_comparison semantics") {
  const auto o = oracle_with(0.0);
  const auto einstein = embed_entity(o, 1879, 0, 1);
  const auto newton = embed_entity(o, 1643, 0, 2);
  CHECK(answer_comparison(o, einstein, newton, AttributeKind::birth_year) == Answer::No);
  CHECK(answer_comparison(o, newton, einstein, AttributeKind::birth_year) == Answer::Yes);
  CHECK(answer_comparison(o, einstein, einstein, AttributeKind::birth_year) == Answer::No);
  CHECK(answer_comparison(o, einstein, newton, AttributeKind::latitude) == Answer::Yes);
  CHECK_THROWS_AS(answer_comparison(o, Eigen::VectorXd::Zero(3), newton, AttributeKind::birth_year), Error);
}

TEST_CASE("editing h_y by s*delta along u moves the decoded value by delta") {
  const auto o = oracle_with(0.2);
  const auto h = embed_entity(o, 1700, 1, 4);
  for (double delta : {-250.0, 3.5, 100.0}) {
    const auto moved = apply_intervention(h, o.planted_direction, delta * o.scale);
    CHECK(o.decode(moved) - o.decode(h) == doctest::Approx(delta).epsilon(1e-9));
  }
}

TEST_CASE("margin rule: flips exactly when the margin is below delta") {
  auto f = testutil::make_synth({.d = 16, .n_layers = 4, .n_entities = 60, .n_samples = 400, .noise = 0.0});
  const auto& o = f.oracle;
  const auto layer = o.readout_layer();
  const auto hx = f.store().matrix(layer, TokenRole::entity_x_last).values();
  const auto hy = f.store().matrix(layer, TokenRole::entity_y_last).values();
  const double delta = 50.0;
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < f.samples.size(); ++i) {
    const Eigen::VectorXd x = hx.row(static_cast<Eigen::Index>(i)).transpose();
    const Eigen::VectorXd y = hy.row(static_cast<Eigen::Index>(i)).transpose();
    const Answer clean = answer_comparison(o, x, y, o.attribute_kind);
    const double margin = std::abs(o.decode(x) - o.decode(y));
    const double step = flip_sign(o.attribute_kind, clean) * o.scale * delta;
    const Answer patched = answer_comparison(o, x, apply_intervention(y, o.planted_direction, step),
                                             o.attribute_kind);
    if (std::abs(margin - delta) < 1e-6) continue;
    CHECK((patched != clean) == (margin < delta));
    flipped += patched != clean;
  }
  CHECK(flipped > 0);
  CHECK(flipped < f.samples.size());
}

TEST_CASE("generated store: answers, antisymmetry and layout") {
  auto f = testutil::make_synth({.d = 16, .n_layers = 4, .n_entities = 12, .n_samples = 132, .noise = 0.1});
  const auto& m = f.store().manifest();
  CHECK(m.d_model == 16);
  CHECK(m.n_layers == 4);
  CHECK(m.roles_present.size() == 3);
  CHECK(validate(f.store()).ok());
  REQUIRE(f.synth->answers.size() == f.samples.size());

  std::map<std::pair<std::string, std::string>, Answer> by_pair;
  for (const auto& s : f.samples) {
    const Answer a = f.synth->answers.at(s.sample_id);
    // Orthogonal noise decodes exactly, so answers equal the gold labels.
    CHECK(a == s.gold);
    by_pair[{s.entity_x.id, s.entity_y.id}] = a;
  }
  // 12 entities, all 132 ordered pairs: both orientations present.
  std::size_t checked = 0;
  for (const auto& [pair, a] : by_pair) {
    const auto it = by_pair.find({pair.second, pair.first});
    REQUIRE(it != by_pair.end());
    CHECK(it->second == negate(a));
    ++checked;
  }
  CHECK(checked == 132);
  CHECK(load_oracle(f.dir->path() / "store" / "oracle.json").planted_direction == f.oracle.planted_direction);
}

TEST_CASE("generation is deterministic") {
  auto a = testutil::make_synth({.d = 8, .n_layers = 2, .n_entities = 20, .n_samples = 50});
  auto b = testutil::make_synth({.d = 8, .n_layers = 2, .n_entities = 20, .n_samples = 50});
  for (std::size_t l = 0; l < 2; ++l) {
    for (auto r : {TokenRole::entity_x_last, TokenRole::entity_y_last, TokenRole::sequence_last}) {
      CHECK(a.store().matrix(l, r).values() == b.store().matrix(l, r).values());
    }
  }
  CHECK(a.synth->answers == b.synth->answers);
}

TEST_CASE("sigma 0: classification probe is perfect in planted layers") {
  auto f = testutil::make_synth({.d = 32, .n_layers = 4, .n_entities = 200, .n_samples = 800, .noise = 0.0});
  std::map<std::string, Answer> labels = f.synth->answers;
  // Rank of sequence_last at sigma 0 is 2 (value difference and answer code).
  const auto result = layer_sweep_classification(f.store(), labels, TokenRole::sequence_last, f.split(),
                                                 SweepOptions{2, 1});
  for (const auto& e : result.entries) {
    if (f.oracle.is_planted(e.layer)) CHECK(e.test == 1.0);
  }
}

TEST_CASE("oracle JSON round-trip") {
  testutil::TempDir dir("oracle");
  const auto o = oracle_with(0.3, NoiseMode::isotropic, AttributeKind::latitude);
  save_oracle(o, dir / "o.json");
  const auto r = load_oracle(dir / "o.json");
  CHECK(r.d == o.d);
  CHECK(r.n_layers == o.n_layers);
  CHECK(r.attribute_kind == AttributeKind::latitude);
  CHECK(r.planted_direction == o.planted_direction);
  CHECK(r.comparison_direction == o.comparison_direction);
  CHECK(r.scale == o.scale);
  CHECK(r.offset == o.offset);
  CHECK(r.noise_sigma == o.noise_sigma);
  CHECK(r.null_sigma == o.null_sigma);
  CHECK(r.noise_mode == NoiseMode::isotropic);
  CHECK(r.seed == o.seed);
}

TEST_CASE("isotropic noise perturbs the planted coordinate") {
  const auto o = oracle_with(0.1, NoiseMode::isotropic);
  const auto h = embed_entity(o, 1750, 0, 3);
  CHECK(o.decode(h) != doctest::Approx(1750).epsilon(1e-9));
}

TEST_CASE("synthetic entities") {
  const auto a = synthetic_entities(AttributeKind::latitude, 300, 5);
  CHECK(a == synthetic_entities(AttributeKind::latitude, 300, 5));
  std::set<std::string> ids;
  for (const auto& e : a) {
    CHECK(e.value >= -89.0);
    CHECK(e.value <= 89.0);
    validate_entity(e);
    ids.insert(e.id);
  }
  CHECK(ids.size() == 300);
  for (const auto& e : synthetic_entities(AttributeKind::birth_year, 100, 5)) {
    CHECK(e.value == std::round(e.value));
  }
}
