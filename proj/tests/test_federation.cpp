#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <vector>

#include "fat/data_synth.hpp"
#include "fat/federation.hpp"
#include "fat/model.hpp"
#include "fat/trainers.hpp"

using namespace fat;

namespace {

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  auto as = model_tensors(a), bs = model_tensors(b);
  for (int i = 0; i < kModelTensorCount; ++i) {
    if (as[(size_t)i]->shape != bs[(size_t)i]->shape) return false;
    if (std::memcmp(as[(size_t)i]->data.data(), bs[(size_t)i]->data.data(),
                    as[(size_t)i]->data.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

double max_abs_diff(const ModelParams& a, const ModelParams& b) {
  double worst = 0.0;
  const int64_t total = scalar_count(a);
  for (int64_t i = 0; i < total; ++i)
    worst = std::max(worst, std::fabs((double)get_scalar(a, i) - (double)get_scalar(b, i)));
  return worst;
}

ModelParams constant_model(const ArchDescriptor& arch, float v) {
  ModelParams p = model_shell(arch);
  for (Tensor* t : model_tensors(p))
    for (float& x : t->data) x = v;
  return p;
}

DatasetSpec small_spec() {
  DatasetSpec s;
  s.n_silos = 3;
  s.supervised_ids = {0};
  s.samples_per_silo = {8, 8, 8};
  s.image_size = 8;
  s.test_samples = 20;  // crosses the evaluation chunk boundary of 16
  s.pretrain_samples = 4;
  s.intensity_offsets = {-0.2f, 0.0f, 0.2f};
  s.tumor_freqs = {0.5f, 0.9f, 0.9f};
  s.seed = 21;
  return s;
}

FederationConfig small_fed(RunMode mode, int rounds) {
  FederationConfig f;
  f.mode = mode;
  f.total_rounds = rounds;
  f.alternation_period = 1;
  f.eval_every = 2;
  f.local.epochs = 1;
  f.local.batch_size = 2;
  f.local.lr_theta = 0.05;
  f.local.lr_xi = 0.05;
  f.seed = 5;
  return f;
}

}  // namespace

TEST_CASE("phase_of matches its closed form over whole windows") {
  for (const int A : {1, 2, 5}) {
    for (int t = 0; t < 6 * A; ++t) {
      const bool want_supervised = (t % (2 * A)) < A;
      REQUIRE(phase_of(t, A) ==
              (want_supervised ? PhaseTag::Supervised : PhaseTag::Unsupervised));
    }
    // every window of 2A rounds holds exactly A supervised rounds
    for (int start = 0; start + 2 * A <= 6 * A; start += 2 * A) {
      int sup = 0;
      for (int t = start; t < start + 2 * A; ++t)
        sup += phase_of(t, A) == PhaseTag::Supervised ? 1 : 0;
      REQUIRE(sup == A);
    }
  }
  CHECK(phase_of(0, 3) == PhaseTag::Supervised);  // rounds always start supervised
  CHECK_THROWS(phase_of(-1, 2));
  CHECK_THROWS(phase_of(0, 0));
}

TEST_CASE("aggregating identical models is the identity within 1e-6") {
  const ArchDescriptor arch{1, 4, 3};
  const ModelParams m = init_model(arch, (uint64_t)50);
  const ModelParams out = aggregate({m, m, m}, std::vector<int64_t>{3, 1, 5});
  CHECK(max_abs_diff(out, m) < 1e-6);
}

TEST_CASE("the two-model scalar case lands on the weighted mean") {
  const ArchDescriptor arch{1, 4, 3};
  const ModelParams zeros = constant_model(arch, 0.0f);
  const ModelParams fours = constant_model(arch, 4.0f);
  const ModelParams out = aggregate({zeros, fours}, std::vector<int64_t>{3, 1});
  // (3*0 + 1*4) / 4 = 1
  const int64_t total = scalar_count(out);
  for (int64_t i = 0; i < total; ++i)
    REQUIRE(std::fabs((double)get_scalar(out, i) - 1.0) < 1e-6);
}

TEST_CASE("aggregation is invariant to participant order") {
  const ArchDescriptor arch{1, 4, 3};
  const ModelParams a = init_model(arch, (uint64_t)51);
  const ModelParams b = init_model(arch, (uint64_t)52);
  const ModelParams c = init_model(arch, (uint64_t)53);
  const ModelParams abc = aggregate({a, b, c}, std::vector<int64_t>{2, 5, 3});
  const ModelParams cab = aggregate({c, a, b}, std::vector<int64_t>{3, 2, 5});
  CHECK(max_abs_diff(abc, cab) < 1e-6);
}

TEST_CASE("aggregation rejects malformed inputs") {
  const ArchDescriptor arch{1, 4, 3};
  const ModelParams m = init_model(arch, (uint64_t)54);
  CHECK_THROWS(aggregate({}, std::vector<int64_t>{}));
  CHECK_THROWS(aggregate({m}, std::vector<int64_t>{1, 2}));
  CHECK_THROWS(aggregate({m}, std::vector<int64_t>{0}));
  CHECK_THROWS(aggregate({m}, std::vector<int64_t>{-3}));
  const ModelParams other = init_model(ArchDescriptor{1, 6, 3}, (uint64_t)55);
  CHECK_THROWS(aggregate({m, other}, std::vector<int64_t>{1, 1}));
  CHECK_THROWS(aggregate_weighted({m, m}, {0.5, -0.5}));
}

TEST_CASE("round plans validate ordering, positivity and normalization") {
  RoundPlan p;
  p.participants = {0, 2};
  p.weights = {0.25, 0.75};
  CHECK_NOTHROW(validate_round_plan(p));
  p.weights = {0.5, 0.6};
  CHECK_THROWS(validate_round_plan(p));
  p.weights = {1.5, -0.5};
  CHECK_THROWS(validate_round_plan(p));
  p.participants = {2, 0};
  p.weights = {0.25, 0.75};
  CHECK_THROWS(validate_round_plan(p));
  p.participants = {};
  p.weights = {};
  CHECK_THROWS(validate_round_plan(p));
}

TEST_CASE("gaussian ramp-up hits both endpoints and increases strictly") {
  const int T = 60;
  CHECK(std::fabs(gaussian_rampup(0, T) - std::exp(-5.0)) < 1e-9);
  CHECK(gaussian_rampup(T - 1, T) == 1.0);
  double prev = 0.0;
  for (int t = 0; t < T; ++t) {
    const double v = gaussian_rampup(t, T);
    REQUIRE(v > prev);
    prev = v;
  }
  CHECK_THROWS(gaussian_rampup(-1, T));
  CHECK_THROWS(gaussian_rampup(T, T));
  CHECK_THROWS(gaussian_rampup(0, 1));
}

TEST_CASE("federation config defaults validate and warmup falls back to T/6") {
  FederationConfig c;
  CHECK_NOTHROW(validate_federation_config(c));
  CHECK(effective_warmup(c) == 10);
  c.warmup_rounds = 7;
  CHECK(effective_warmup(c) == 7);
  c.warmup_rounds = 100;
  CHECK_THROWS(validate_federation_config(c));
  c = {};
  c.total_rounds = 0;
  CHECK_THROWS(validate_federation_config(c));
  c = {};
  c.confidence_threshold = 1.0f;
  CHECK_THROWS(validate_federation_config(c));
}

TEST_CASE("evaluate_model pools predictions across chunks like a per-sample pass") {
  const DatasetSpec spec = small_spec();
  const SiloDataset test = generate_test_set(spec);
  const ModelParams model = init_model(ArchDescriptor{1, 4, 3}, (uint64_t)60);
  const std::vector<double> got = evaluate_model(model, test);

  LabelMap pred(test.n_samples(), spec.image_size, spec.image_size, 3);
  const int64_t per = (int64_t)spec.image_size * spec.image_size;
  for (int i = 0; i < test.n_samples(); ++i) {
    const Tensor logits = model_forward(model, gather_batch(test.images, {i}));
    const LabelMap one = pseudo_label(ops::softmax_channels(logits));
    std::copy(one.ids.begin(), one.ids.end(), pred.ids.begin() + (int64_t)i * per);
  }
  const std::vector<double> want = dice_scores(pred, *test.labels);
  REQUIRE(got.size() == want.size());
  for (size_t c = 0; c < got.size(); ++c) REQUIRE(got[c] == want[c]);
}

TEST_CASE("silo indexing requires labels somewhere and unique ids") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> silos;
  for (int k = 0; k < 3; ++k) silos.push_back(generate_silo(spec, k));
  CHECK_NOTHROW(detail::index_silos(silos));
  std::vector<SiloDataset> dup = {silos[0], silos[0]};
  CHECK_THROWS(detail::index_silos(dup));
  std::vector<SiloDataset> no_sup = {silos[1], silos[2]};
  CHECK_THROWS(detail::index_silos(no_sup));
  CHECK_THROWS(detail::index_silos({}));
}

TEST_CASE("weighted-ramp plans tilt toward supervised silos early on") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> silos;
  for (int k = 0; k < 3; ++k) silos.push_back(generate_silo(spec, k));
  const detail::SiloIndex ix = detail::index_silos(silos);
  FederationConfig cfg = small_fed(RunMode::WeightedRamp, 10);

  const std::vector<int>* members = nullptr;
  const RoundPlan early = detail::plan_for(cfg, silos, ix, 0, &members);
  // all silos hold 8 samples; eta(0)=e^-5, so supervised weight ~ 1/(1+2e^-5)
  const double eta = std::exp(-5.0);
  CHECK(std::fabs(early.weights[0] - 1.0 / (1.0 + 2.0 * eta)) < 1e-12);
  CHECK(std::fabs(early.weights[1] - eta / (1.0 + 2.0 * eta)) < 1e-12);

  const RoundPlan late = detail::plan_for(cfg, silos, ix, 9, &members);
  for (double w : late.weights) CHECK(std::fabs(w - 1.0 / 3.0) < 1e-12);  // eta = 1
}

TEST_CASE("FAT plans alternate between disjoint supervision groups") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> silos;
  for (int k = 0; k < 3; ++k) silos.push_back(generate_silo(spec, k));
  const detail::SiloIndex ix = detail::index_silos(silos);
  FederationConfig cfg = small_fed(RunMode::FAT, 4);
  cfg.alternation_period = 1;

  const std::vector<int>* members = nullptr;
  const RoundPlan sup = detail::plan_for(cfg, silos, ix, 0, &members);
  CHECK(sup.phase == PhaseTag::Supervised);
  CHECK(sup.participants == std::vector<int>{0});
  const RoundPlan unsup = detail::plan_for(cfg, silos, ix, 1, &members);
  CHECK(unsup.phase == PhaseTag::Unsupervised);
  CHECK(unsup.participants == std::vector<int>{1, 2});
  CHECK(std::fabs(unsup.weights[0] + unsup.weights[1] - 1.0) < 1e-12);
}

TEST_CASE("pool_silos concatenates everything with truth exposed") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> silos;
  for (int k = 0; k < 3; ++k) silos.push_back(generate_silo(spec, k));
  const SiloDataset pool = pool_silos(silos);
  CHECK(pool.supervised);
  CHECK(pool.n_samples() == 24);
  CHECK(pool.labels.has_value());
  CHECK(pool.silo_id > 2);
  // first block is silo 0's images verbatim
  for (size_t i = 0; i < silos[0].images.data.size(); ++i)
    REQUIRE(pool.images.data[i] == silos[0].images.data[i]);
  // unsupervised silo labels came from the hidden truth
  const int64_t per = (int64_t)spec.image_size * spec.image_size;
  for (int64_t i = 0; i < per; ++i)
    REQUIRE(pool.labels->ids[(size_t)(8 * per + i)] == silos[1].diagnostic_labels->ids[(size_t)i]);
}

TEST_CASE("the centralized mode equals one long pooled training run") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> silos;
  for (int k = 0; k < 3; ++k) silos.push_back(generate_silo(spec, k));
  const SiloDataset test = generate_test_set(spec);
  const ModelParams theta0 = init_model(ArchDescriptor{1, 4, 3}, (uint64_t)61);

  FederationConfig cfg = small_fed(RunMode::Centralized, 3);
  cfg.local.epochs = 2;
  const RunHistory hist = run_federation(cfg, silos, theta0, test);

  // oracle: T rounds of E epochs on one persistent stream == T*E epochs
  const SiloDataset pool = pool_silos(silos);
  LocalTrainConfig longrun = cfg.local;
  longrun.epochs = cfg.total_rounds * cfg.local.epochs;
  RngStream stream(substream_id(cfg.seed, {kStreamCentral}));
  const ModelParams want = supervised_training(pool, theta0, longrun, stream);
  CHECK(bitwise_equal(hist.final_model, want));
}

TEST_CASE("federated runs record evaluations on schedule with zero wall_ms") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> silos;
  for (int k = 0; k < 3; ++k) silos.push_back(generate_silo(spec, k));
  const SiloDataset test = generate_test_set(spec);
  const ModelParams theta0 = init_model(ArchDescriptor{1, 4, 3}, (uint64_t)62);

  FederationConfig cfg = small_fed(RunMode::FAT, 5);
  cfg.eval_every = 3;
  const RunHistory hist = run_fat(cfg, silos, theta0, test);
  REQUIRE(hist.records.size() == 3);  // rounds 0 and 3 on schedule, plus final round 4
  CHECK(hist.records[0].round == 0);
  CHECK(hist.records[1].round == 3);
  CHECK(hist.records[2].round == 4);
  for (const MetricsRecord& r : hist.records) {
    CHECK(r.wall_ms == 0.0);
    REQUIRE(r.dice.size() == 3);
    for (double d : r.dice) {
      REQUIRE(d >= 0.0);
      REQUIRE(d <= 1.0);
    }
  }
  CHECK(hist.round_wall_ms.size() == 5);  // measured times live here instead
  CHECK(hist.records[0].phase == PhaseTag::Supervised);    // A=1: round 0
  CHECK(hist.records[1].phase == PhaseTag::Unsupervised);  // A=1: round 3
  CHECK(hist.records[2].phase == PhaseTag::Supervised);    // A=1: round 4
}

TEST_CASE("FAT demands at least one unsupervised silo") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> only_sup = {generate_silo(spec, 0)};
  const SiloDataset test = generate_test_set(spec);
  const ModelParams theta0 = init_model(ArchDescriptor{1, 4, 3}, (uint64_t)63);
  FederationConfig cfg = small_fed(RunMode::FAT, 2);
  CHECK_THROWS(run_federation(cfg, only_sup, theta0, test));
  cfg.mode = RunMode::SupervisedOnly;
  CHECK_NOTHROW(run_federation(cfg, only_sup, theta0, test));
}

TEST_CASE("every mode produces identical histories regardless of the job count") {
  const DatasetSpec spec = small_spec();
  std::vector<SiloDataset> silos;
  for (int k = 0; k < 3; ++k) silos.push_back(generate_silo(spec, k));
  const SiloDataset test = generate_test_set(spec);
  const ModelParams theta0 = init_model(ArchDescriptor{1, 4, 3}, (uint64_t)64);

  for (const RunMode mode : {RunMode::FAT, RunMode::FedAvgAll, RunMode::WeightedRamp,
                             RunMode::ThresholdSOTA}) {
    FederationConfig cfg = small_fed(mode, 4);
    cfg.warmup_rounds = 1;
    const RunHistory serial = run_federation(cfg, silos, theta0, test);
    cfg.jobs = 4;
    const RunHistory parallel = run_federation(cfg, silos, theta0, test);
    REQUIRE(bitwise_equal(serial.final_model, parallel.final_model));
    REQUIRE(serial.records.size() == parallel.records.size());
    for (size_t i = 0; i < serial.records.size(); ++i)
      for (size_t c = 0; c < serial.records[i].dice.size(); ++c)
        REQUIRE(serial.records[i].dice[c] == parallel.records[i].dice[c]);
  }
}

TEST_CASE("mode names round-trip through the parser") {
  for (const RunMode m : {RunMode::FAT, RunMode::FedAvgAll, RunMode::SupervisedOnly,
                          RunMode::WeightedRamp, RunMode::ThresholdSOTA, RunMode::Centralized})
    CHECK(parse_mode(mode_name(m)) == m);
  CHECK_THROWS(parse_mode("fat"));
  CHECK_THROWS(parse_mode(""));
}
