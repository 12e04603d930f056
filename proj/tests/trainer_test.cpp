#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "stmixer/errors.hpp"
#include "stmixer/model.hpp"
#include "stmixer/synthdata.hpp"
#include "stmixer/trainer.hpp"
#include "testutil.hpp"

namespace {

using stmixer::DataError;
using stmixer::Dataset;
using stmixer::MixerKind;
using stmixer::Model;
using stmixer::ModelConfig;
using stmixer::NumericError;
using stmixer::OptState;
using stmixer::ParamSlot;
using stmixer::Split;
using stmixer::Tensor;
using stmixer::TrainConfig;
using stmixer::TrainResult;

TrainConfig quick_train_config(int epochs) {
  TrainConfig cfg;
  cfg.total_epochs = epochs;
  cfg.warmup_epochs = epochs > 1 ? 1 : 0;
  cfg.batch_size = 8;
  cfg.base_lr = 2e-3;
  cfg.seed = 9;
  return cfg;
}

const Dataset& shared_dataset() {
  static const Dataset ds = stmixer::generate_dataset(testutil::small_synth_config(), 40, 37);
  return ds;
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

TEST(Schedule, WarmupAndCosineAnchors) {
  const TrainConfig cfg;  // base 5e-4, batch 16: peak = 5e-4 * 16/64 = 1.25e-4
  EXPECT_DOUBLE_EQ(stmixer::peak_lr(cfg), 1.25e-4);
  EXPECT_DOUBLE_EQ(stmixer::lr_at(0.0, cfg), 1e-6);
  EXPECT_DOUBLE_EQ(stmixer::lr_at(5.0, cfg), 1.25e-4);
  EXPECT_DOUBLE_EQ(stmixer::lr_at(60.0, cfg), 0.0);
  EXPECT_DOUBLE_EQ(stmixer::lr_at(120.0, cfg), 0.0);  // clamped past the end
  EXPECT_NEAR(stmixer::lr_at(32.5, cfg), 6.25e-5, 1e-15);  // cosine midpoint
}

TEST(Schedule, WarmupIsLinear) {
  const TrainConfig cfg;
  const double peak = stmixer::peak_lr(cfg);
  EXPECT_DOUBLE_EQ(stmixer::lr_at(2.5, cfg), 1e-6 + (peak - 1e-6) * 0.5);
  EXPECT_DOUBLE_EQ(stmixer::lr_at(1.0, cfg), 1e-6 + (peak - 1e-6) * 0.2);
}

TEST(Schedule, ContinuousAtTheWarmupBoundary) {
  const TrainConfig cfg;
  const double below = stmixer::lr_at(5.0 - 1e-9, cfg);
  const double above = stmixer::lr_at(5.0 + 1e-9, cfg);
  EXPECT_NEAR(below, above, 1e-12);
}

TEST(Schedule, PeakScalesWithBatchSize) {
  TrainConfig cfg;
  cfg.batch_size = 64;
  EXPECT_DOUBLE_EQ(stmixer::peak_lr(cfg), cfg.base_lr);
  cfg.batch_size = 32;
  EXPECT_DOUBLE_EQ(stmixer::peak_lr(cfg), cfg.base_lr / 2);
}

TEST(Schedule, ConfigValidationRejectsBadSettings) {
  const auto rejected = [](TrainConfig cfg) {
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
  };
  TrainConfig cfg;
  cfg.batch_size = 0;
  rejected(cfg);
  cfg = TrainConfig{};
  cfg.warmup_epochs = 60;
  rejected(cfg);
  cfg = TrainConfig{};
  cfg.base_lr = 0;
  rejected(cfg);
  cfg = TrainConfig{};
  cfg.beta2 = 1.0;
  rejected(cfg);
  cfg = TrainConfig{};
  cfg.alpha = -0.5;
  rejected(cfg);
}

TEST(AdamW, ZeroGradientsWithoutDecayLeaveValuesUntouched) {
  ParamSlot<double> p("p", Tensor<double>({2, 2}));
  p.value.fill(0.37);
  p.reset_grad();
  std::vector<ParamSlot<double>*> params{&p};
  OptState<double> st(params);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  stmixer::adamw_step<double>(params, st, 0.1, cfg);
  for (size_t i = 0; i < p.value.numel(); ++i) EXPECT_EQ(p.value[i], 0.37);
}

TEST(AdamW, ZeroLearningRateFreezesParameters) {
  ParamSlot<double> p("p", Tensor<double>({3}));
  p.value[0] = 1.0;
  p.value[1] = -2.0;
  p.value[2] = 0.5;
  p.reset_grad();
  p.grad.fill(3.0);
  std::vector<ParamSlot<double>*> params{&p};
  OptState<double> st(params);
  stmixer::adamw_step<double>(params, st, 0.0, TrainConfig{});
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_EQ(p.value[1], -2.0);
  EXPECT_EQ(p.value[2], 0.5);
}

TEST(AdamW, FirstStepMatchesHandComputation) {
  // m=0.1, v=0.001; bias corrections 0.1 and 0.001 give unit moments, so the
  // update is lr/(1+eps).
  ParamSlot<double> p("p", Tensor<double>({1}));
  p.value[0] = 1.0;
  p.reset_grad();
  p.grad[0] = 1.0;
  std::vector<ParamSlot<double>*> params{&p};
  OptState<double> st(params);
  TrainConfig cfg;
  cfg.weight_decay = 0.0;
  stmixer::adamw_step<double>(params, st, 0.1, cfg);
  EXPECT_NEAR(p.value[0], 1.0 - 0.1 / (1.0 + cfg.adam_eps), 1e-15);
}

TEST(AdamW, DecayIsDecoupledFromTheGradient) {
  ParamSlot<double> p("p", Tensor<double>({1}));
  p.value[0] = 2.0;
  p.reset_grad();
  std::vector<ParamSlot<double>*> params{&p};
  OptState<double> st(params);
  TrainConfig cfg;
  cfg.weight_decay = 0.5;
  stmixer::adamw_step<double>(params, st, 0.1, cfg);
  EXPECT_DOUBLE_EQ(p.value[0], 2.0 * (1.0 - 0.1 * 0.5));
}

TEST(AdamW, NonTrainableSlotsAreSkipped) {
  ParamSlot<double> p("p", Tensor<double>({1}));
  p.value[0] = 1.0;
  p.trainable = false;
  p.reset_grad();
  p.grad[0] = 5.0;
  std::vector<ParamSlot<double>*> params{&p};
  OptState<double> st(params);
  stmixer::adamw_step<double>(params, st, 0.1, TrainConfig{});
  EXPECT_EQ(p.value[0], 1.0);
}

TEST(AdamW, MismatchedStateRejected) {
  ParamSlot<double> p("p", Tensor<double>({1}));
  ParamSlot<double> q("q", Tensor<double>({1}));
  std::vector<ParamSlot<double>*> one{&p};
  std::vector<ParamSlot<double>*> two{&p, &q};
  OptState<double> st(one);
  EXPECT_THROW(stmixer::adamw_step<double>(two, st, 0.1, TrainConfig{}), std::invalid_argument);
}

TEST(Model, ParameterNamesAreUnique) {
  Model<float> model(testutil::small_model_config());
  std::set<std::string> names;
  size_t slots = 0;
  model.visit([&](ParamSlot<float>& p) {
    ++slots;
    EXPECT_TRUE(names.insert(p.name).second) << "duplicate name " << p.name;
  });
  EXPECT_EQ(names.size(), slots);
  EXPECT_GT(model.param_count(), 0u);
}

TEST(Model, MixersHaveDistinctParameterInventories) {
  ModelConfig cfg = testutil::small_model_config();
  Model<float> stm_model(cfg);
  cfg.mixer = MixerKind::concat;
  Model<float> cat_model(cfg);
  std::set<std::string> stm_names, cat_names;
  stm_model.visit([&](ParamSlot<float>& p) { stm_names.insert(p.name); });
  cat_model.visit([&](ParamSlot<float>& p) { cat_names.insert(p.name); });
  EXPECT_NE(stm_names, cat_names);
}

TEST(Model, InferenceIsDeterministic) {
  Model<float> model(testutil::small_model_config());
  model.init(3);
  const auto& c = shared_dataset().cases[0];
  const auto a = model.infer(c);
  const auto b = model.infer(c);
  ASSERT_TRUE(a.h1_logits.same_shape(b.h1_logits));
  for (size_t i = 0; i < a.h1_logits.numel(); ++i) EXPECT_EQ(a.h1_logits[i], b.h1_logits[i]);
  for (size_t i = 0; i < a.h2_logits.numel(); ++i) EXPECT_EQ(a.h2_logits[i], b.h2_logits[i]);
}

TEST(Model, SnapshotRestoreRoundTrip) {
  Model<float> model(testutil::small_model_config());
  model.init(4);
  const auto snap = snapshot_params(model);
  model.param_list()[0]->value.fill(42.0f);
  restore_params(model, snap);
  size_t i = 0;
  model.visit([&](ParamSlot<float>& p) {
    for (size_t k = 0; k < p.value.numel(); ++k) ASSERT_EQ(p.value[k], snap[i][k]);
    ++i;
  });
  auto short_snap = snap;
  short_snap.pop_back();
  EXPECT_THROW(restore_params(model, short_snap), std::invalid_argument);
}

TEST(Train, DeterministicAcrossRuns) {
  const ModelConfig mc = testutil::small_model_config();
  const TrainConfig tc = quick_train_config(3);
  Model<float> a(mc), b(mc);
  a.init(5);
  b.init(5);
  const TrainResult ra = stmixer::train(a, shared_dataset(), tc);
  const TrainResult rb = stmixer::train(b, shared_dataset(), tc);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (size_t e = 0; e < ra.history.size(); ++e) {
    EXPECT_EQ(ra.history[e].loss, rb.history[e].loss);
    EXPECT_EQ(ra.history[e].val.auc_h1, rb.history[e].val.auc_h1);
  }
  const auto pa = snapshot_params(a), pb = snapshot_params(b);
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    for (size_t k = 0; k < pa[i].numel(); ++k) ASSERT_EQ(pa[i][k], pb[i][k]);
  }
}

TEST(Train, FirstEpochLossSitsNearTheUninformedValue) {
  // Near-zero logits give wce(H1) ~ ln 2 and wce(H2) ~ mean class weight times
  // ln 3; under equal priors that is about 1.46 in total.
  Model<float> model(testutil::small_model_config());
  model.init(5);
  const TrainResult res = stmixer::train(model, shared_dataset(), quick_train_config(1));
  const double expected = std::log(2.0) + (0.1 + 1.0 + 1.0) / 3.0 * std::log(3.0);
  EXPECT_NEAR(res.history[0].loss, expected, 0.15 * expected);
}

TEST(Train, LossGoesDownOnTheTrainingSet) {
  Model<float> model(testutil::small_model_config());
  model.init(5);
  const TrainResult res = stmixer::train(model, shared_dataset(), quick_train_config(6));
  EXPECT_LT(res.history.back().loss, res.history.front().loss);
}

TEST(Train, KeepsTheBestValidationEpoch) {
  Model<float> model(testutil::small_model_config());
  model.init(5);
  const TrainResult res = stmixer::train(model, shared_dataset(), quick_train_config(4));
  double best = -1;
  for (const auto& rec : res.history) best = std::max(best, rec.val.auc_h1);
  ASSERT_GE(res.best_epoch, 0);
  EXPECT_DOUBLE_EQ(res.best_auc_h1, best);
  EXPECT_DOUBLE_EQ(res.history[static_cast<size_t>(res.best_epoch)].val.auc_h1, best);

  // The model must be left holding exactly the best epoch's parameters.
  const auto val_idx = shared_dataset().indices(Split::val);
  const auto rep = stmixer::evaluate(model, shared_dataset(), val_idx);
  EXPECT_DOUBLE_EQ(rep.auc_h1, res.best_auc_h1);
}

TEST(Train, AlphaZeroScoresGrowthFromTheThreeWayHead) {
  Model<float> model(testutil::small_model_config());
  model.init(5);
  TrainConfig tc = quick_train_config(1);
  tc.alpha = 0.0;
  const TrainResult res = stmixer::train(model, shared_dataset(), tc);
  const auto val_idx = shared_dataset().indices(Split::val);
  const auto derived = stmixer::evaluate(model, shared_dataset(), val_idx, true);
  EXPECT_DOUBLE_EQ(res.history[0].val.auc_h1, derived.auc_h1);
}

TEST(Train, RejectsDatasetsWithoutBothSplits) {
  Dataset all_train = shared_dataset();
  for (auto& c : all_train.cases) c.split = Split::train;
  Model<float> model(testutil::small_model_config());
  model.init(5);
  EXPECT_THROW(stmixer::train(model, all_train, quick_train_config(1)), std::invalid_argument);
}

TEST(Train, NonFiniteLossAbortsWithDiagnostic) {
  Model<float> model(testutil::small_model_config());
  model.init(5);
  model.param_list()[0]->value.fill(std::numeric_limits<float>::quiet_NaN());
  EXPECT_THROW(stmixer::train(model, shared_dataset(), quick_train_config(1)), NumericError);
}

TEST(Evaluate, RejectsEmptyIndexList) {
  Model<float> model(testutil::small_model_config());
  model.init(5);
  EXPECT_THROW(stmixer::evaluate(model, shared_dataset(), std::vector<int>{}),
               std::invalid_argument);
}

TEST(MetricsCsv, LayoutMatchesTheDocumentedColumns) {
  TrainResult res;
  stmixer::EpochRecord r0;
  r0.epoch = 0;
  r0.loss = 1.5;
  r0.val.auc_h1 = 0.5;
  r0.val.auc_h2 = 0.5;
  r0.val.auc_h2_d = 0.5;
  r0.val.accuracy = 0.25;
  r0.val.kappa = 0.0;
  stmixer::EpochRecord r1 = r0;
  r1.epoch = 1;
  r1.loss = 0.75;
  r1.val.auc_h1 = 0.875;
  res.history = {r0, r1};

  const std::string path = ::testing::TempDir() + "metrics_layout.csv";
  stmixer::write_metrics_csv(path, res);
  EXPECT_EQ(read_file(path),
            "epoch,loss,auc_h1,auc_h2,auc_h2_d,acc,kappa\n"
            "0,1.5,0.5,0.5,0.5,0.25,0\n"
            "1,0.75,0.875,0.5,0.5,0.25,0\n");
}

TEST(MetricsCsv, UnwritablePathRaises) {
  EXPECT_THROW(stmixer::write_metrics_csv("/nonexistent_dir_zz/m.csv", TrainResult{}), DataError);
}

TEST(Checkpoint, RoundTripRestoresEveryParameterExactly) {
  const ModelConfig mc = testutil::small_model_config();
  Model<float> a(mc), b(mc);
  a.init(1);
  b.init(2);
  const std::string path = ::testing::TempDir() + "ckpt_roundtrip.bin";
  const std::string echo = "{\"mixer\":\"stm\",\"alpha\":1}";
  stmixer::save_checkpoint(path, a, echo);
  EXPECT_EQ(stmixer::read_checkpoint_echo(path), echo);
  EXPECT_EQ(stmixer::load_checkpoint(path, b), echo);
  const auto pa = snapshot_params(a), pb = snapshot_params(b);
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    for (size_t k = 0; k < pa[i].numel(); ++k) ASSERT_EQ(pa[i][k], pb[i][k]);
  }
}

TEST(Checkpoint, MismatchedParameterInventoryRejected) {
  ModelConfig mc = testutil::small_model_config();
  Model<float> stm_model(mc);
  stm_model.init(1);
  const std::string path = ::testing::TempDir() + "ckpt_mismatch.bin";
  stmixer::save_checkpoint(path, stm_model, "{}");

  ModelConfig cat_cfg = mc;
  cat_cfg.mixer = MixerKind::concat;
  Model<float> cat_model(cat_cfg);
  cat_model.init(1);
  EXPECT_THROW(stmixer::load_checkpoint(path, cat_model), DataError);

  ModelConfig wide_cfg = mc;
  wide_cfg.encoder.embed_dim = 32;
  Model<float> wide_model(wide_cfg);
  wide_model.init(1);
  EXPECT_THROW(stmixer::load_checkpoint(path, wide_model), DataError);
}

TEST(Checkpoint, RejectsForeignAndDamagedFiles) {
  Model<float> model(testutil::small_model_config());
  model.init(1);
  const std::string garbage = ::testing::TempDir() + "ckpt_garbage.bin";
  {
    std::ofstream os(garbage, std::ios::binary);
    os << "definitely not a checkpoint";
  }
  EXPECT_THROW(stmixer::load_checkpoint(garbage, model), DataError);
  EXPECT_THROW(stmixer::read_checkpoint_echo(garbage), DataError);

  const std::string good = ::testing::TempDir() + "ckpt_good.bin";
  stmixer::save_checkpoint(good, model, "{}");
  const std::string full = read_file(good);

  const std::string truncated = ::testing::TempDir() + "ckpt_truncated.bin";
  {
    std::ofstream os(truncated, std::ios::binary);
    os.write(full.data(), static_cast<std::streamsize>(full.size() / 2));
  }
  EXPECT_THROW(stmixer::load_checkpoint(truncated, model), DataError);

  std::string patched = full;
  patched[8] = 2;  // format version field
  const std::string versioned = ::testing::TempDir() + "ckpt_version.bin";
  {
    std::ofstream os(versioned, std::ios::binary);
    os.write(patched.data(), static_cast<std::streamsize>(patched.size()));
  }
  EXPECT_THROW(stmixer::load_checkpoint(versioned, model), DataError);

  EXPECT_THROW(stmixer::load_checkpoint("/no/such/file.bin", model), DataError);
}

}  // namespace
