#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mstl/errors.hpp"
#include "mstl/pipeline.hpp"
#include "oracles.hpp"

namespace mstl {
namespace {

BackboneConfig small_model(std::size_t classes = 2, Variant v = Variant::kOneAttn) {
  BackboneConfig c = BackboneConfig::preset(v);
  c.input_size = 32;
  c.num_classes = classes;
  c.stage_channels = {4, 4, 8, 8};
  c.blocks_per_stage = {1, 1, 1, 1};
  return c;
}

LabeledDataset target_data(std::size_t n, std::uint64_t seed) {
  PhantomSpec s = PhantomSpec::defaults(PhantomKind::kTarget);
  s.image_size = 32;
  s.seed = seed;
  s.split_fractions = {0.5, 0.0, 0.5};
  return generate_phantom(s, n);
}

StageConfig supervised(int epochs, std::uint64_t seed) {
  StageConfig c;
  c.stage = StageKind::kFinetune;
  c.epochs = epochs;
  c.lr = 0.05;
  c.lr_milestones = {};
  c.batch_size = 8;
  c.seed = seed;
  c.augment.scale_to = 36;
  c.augment.crop_to = 32;
  return c;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

// Config file

TEST(Config, ParsesSectionsAndComments) {
  const auto f = ConfigFile::parse("top = 1\n# comment\n; other\n[model]\nvariant = five_attns \n\n[stl_m]\nlr=0.05\n");
  EXPECT_EQ(f.get("", "top"), "1");
  EXPECT_EQ(f.get("model", "variant"), "five_attns");
  EXPECT_EQ(f.get("stl_m", "lr"), "0.05");
  EXPECT_FALSE(f.get("stl_m", "epochs").has_value());
  EXPECT_TRUE(f.has_section("stl_m"));
  EXPECT_FALSE(f.has_section("finetune"));
  EXPECT_EQ(f.keys("model"), std::vector<std::string>{"variant"});
}

TEST(Config, RejectsMalformedText) {
  EXPECT_THROW(ConfigFile::parse("[model\n"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("novalue\n"), ConfigError);
  EXPECT_THROW(ConfigFile::parse("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(ConfigFile::load(temp_path("mstl_no_such_config.ini")), IoError);
}

TEST(Config, ValueConversions) {
  EXPECT_EQ(parse_double("k", "0.25"), 0.25);
  EXPECT_EQ(parse_int("k", "-3"), -3);
  EXPECT_EQ(parse_u64("k", "18446744073709551615"), 18446744073709551615ull);
  EXPECT_TRUE(parse_bool("k", "true"));
  EXPECT_FALSE(parse_bool("k", "false"));
  EXPECT_EQ(parse_int_list("k", "120, 160"), (std::vector<int>{120, 160}));
  EXPECT_EQ(parse_int_list("k", ""), std::vector<int>{});
  EXPECT_THROW(parse_double("k", "abc"), ConfigError);
  EXPECT_THROW(parse_int("k", "1.5"), ConfigError);
  EXPECT_THROW(parse_bool("k", "maybe"), ConfigError);
  EXPECT_THROW(parse_u64("k", "-1"), ConfigError);
}

TEST(Config, StageDefaultsMatchPublishedSchedule) {
  const StageConfig c = stage_config_from(ConfigFile::parse(""), StageKind::kSstlM);
  EXPECT_EQ(c.lr, 0.3);
  EXPECT_EQ(c.lr_decay, 0.1);
  EXPECT_EQ(c.lr_milestones, (std::vector<int>{120, 160}));
  EXPECT_EQ(c.momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.ssl.tau, 0.07);
  EXPECT_EQ(c.ssl.momentum, 0.999);
  EXPECT_EQ(c.ssl.weights.alpha1, 0.8);
  EXPECT_EQ(c.ssl.weights.alpha2, 0.8);
  EXPECT_FALSE(c.ssl.untempered_negatives);
}

TEST(Config, StageOverrides) {
  const auto f = ConfigFile::parse(
      "[finetune]\nepochs = 6\nlr = 0.05\nlr_milestones = 3,4\nbatch_size = 12\nscale_to = 36\ncrop_to = 32\n"
      "flip_prob = 0.25\n[sstl_m]\ntau = 0.2\nalpha1 = 1\nalpha2 = 0.5\nkey_momentum = 0.99\n"
      "untempered_negatives = true\nqueue_capacity = 64\nregion_negatives = 1\n");
  const StageConfig ft = stage_config_from(f, StageKind::kFinetune);
  EXPECT_EQ(ft.epochs, 6);
  EXPECT_EQ(ft.lr, 0.05);
  EXPECT_EQ(ft.lr_milestones, (std::vector<int>{3, 4}));
  EXPECT_EQ(ft.batch_size, 12u);
  EXPECT_EQ(ft.augment.scale_to, 36u);
  EXPECT_EQ(ft.augment.crop_to, 32u);
  EXPECT_EQ(ft.augment.flip_prob, 0.25);
  const StageConfig ssl = stage_config_from(f, StageKind::kSstlM);
  EXPECT_EQ(ssl.ssl.tau, 0.2);
  EXPECT_EQ(ssl.ssl.weights.alpha1, 1.0);
  EXPECT_EQ(ssl.ssl.weights.alpha2, 0.5);
  EXPECT_EQ(ssl.ssl.momentum, 0.99);
  EXPECT_TRUE(ssl.ssl.untempered_negatives);
  EXPECT_EQ(ssl.ssl.queue_capacity, 64u);
  EXPECT_EQ(ssl.ssl.region_negatives, 1u);
  EXPECT_THROW(stage_config_from(ConfigFile::parse("[finetune]\nlearning_rate = 1\n"), StageKind::kFinetune),
               ConfigError);
  EXPECT_THROW(stage_config_from(ConfigFile::parse("[finetune]\nepochs = -1\n"), StageKind::kFinetune), ConfigError);
  EXPECT_THROW(stage_config_from(ConfigFile::parse("[finetune]\nscale_to = 8\ncrop_to = 16\n"), StageKind::kFinetune),
               ConfigError);
}

TEST(Config, ModelAndDataSections) {
  const auto f = ConfigFile::parse(
      "[model]\nvariant = five_attns\ninput_size = 32\nstage_channels = 8,16,32,64\nblocks_per_stage = 1,1,1,1\n"
      "num_classes = 3\n[data]\nkind = medical\nimage_size = 32\nseed = 9\nlesion_probability = 0:0,1:0,2:0.5\n"
      "split_fractions = 0.6,0.2,0.2\n");
  const BackboneConfig m = model_config_from(f);
  EXPECT_EQ(m.attn_plan, BackboneConfig::preset(Variant::kFiveAttns).attn_plan);
  EXPECT_EQ(m.input_size, 32u);
  EXPECT_EQ(m.num_classes, 3u);
  EXPECT_EQ(m.stage_channels, (std::array<std::size_t, 4>{8, 16, 32, 64}));
  const PhantomSpec d = phantom_spec_from(f);
  EXPECT_EQ(d.kind, PhantomKind::kMedical);
  EXPECT_EQ(d.seed, 9u);
  EXPECT_EQ(d.lesion_probability_by_label.at(2), 0.5);
  EXPECT_EQ(d.split_fractions, (std::array<double, 3>{0.6, 0.2, 0.2}));
  EXPECT_THROW(model_config_from(ConfigFile::parse("[model]\nstage_channels = 1,2\n")), ConfigError);
  EXPECT_THROW(model_config_from(ConfigFile::parse("[model]\nvariant = huge\n")), ConfigError);
  EXPECT_THROW(phantom_spec_from(ConfigFile::parse("[data]\nlesion_probability = 1-0.5\n")), ConfigError);
}

TEST(Schedule, StepDecayAtEveryBoundary) {
  StageConfig c;  // lr 0.3, x0.1 at 120 and 160
  for (int e = 0; e < 200; ++e) {
    const double want = e < 120 ? 0.3 : e < 160 ? 0.3 * 0.1 : 0.3 * 0.1 * 0.1;
    EXPECT_EQ(c.sgd_at(e).lr, want) << e;
    EXPECT_EQ(c.sgd_at(e).momentum, 0.9);
    EXPECT_EQ(c.sgd_at(e).weight_decay, 1e-4);
  }
}

// Stage provenance and checkpoints

TEST(Provenance, StagesComposeInOrder) {
  std::vector<StageKind> p;
  append_stage(p, StageKind::kStlN);
  append_stage(p, StageKind::kSstlM);
  append_stage(p, StageKind::kFinetune);
  EXPECT_EQ(p, (std::vector<StageKind>{StageKind::kStlN, StageKind::kSstlM, StageKind::kFinetune}));
  EXPECT_THROW(append_stage(p, StageKind::kStlM), ConfigError);
  EXPECT_THROW(append_stage(p, StageKind::kFinetune), ConfigError);
  for (auto s : {StageKind::kStlN, StageKind::kStlM, StageKind::kSstlM, StageKind::kFinetune})
    EXPECT_EQ(parse_stage(stage_name(s)), s);
  EXPECT_EQ(stage_name(StageKind::kSstlM), "sstl_m");
  EXPECT_THROW(parse_stage("stl_x"), ConfigError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Model m(small_model(2, Variant::kFiveAttns), 3);
  Rng rng(3);
  for (Parameter* p : m.parameters()) p->value = oracle::random_tensor(p->value.shape(), rng, -1e3, 1e3);
  m.parameters()[0]->value[0] = std::nextafter(1.0, 2.0);
  m.parameters()[0]->value[1] = -0.0;
  for (NamedBuffer& b : m.buffers()) *b.tensor = oracle::random_tensor(b.tensor->shape(), rng, 0.1, 2);
  const auto path = temp_path("mstl_ckpt_roundtrip.bin");
  save_checkpoint(path, make_checkpoint(m, {StageKind::kStlN, StageKind::kSstlM}, "rng-state-7"));
  const Checkpoint c = load_checkpoint(path);
  EXPECT_EQ(c.config, m.config());
  EXPECT_EQ(c.provenance, (std::vector<StageKind>{StageKind::kStlN, StageKind::kSstlM}));
  EXPECT_EQ(c.rng_state, "rng-state-7");
  Model back = restore_model(c);
  const auto a = m.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i]->name, b[i]->name);
    ASSERT_EQ(a[i]->value.size(), b[i]->value.size());
    EXPECT_EQ(std::memcmp(a[i]->value.raw(), b[i]->value.raw(), a[i]->value.size() * sizeof(double)), 0);
  }
  const auto ba = m.buffers(), bb = back.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(*ba[i].tensor, *bb[i].tensor);
  EXPECT_TRUE(std::signbit(b[0]->value[1]));
  // Saving the restored model reproduces the file byte for byte.
  const auto path2 = temp_path("mstl_ckpt_roundtrip2.bin");
  save_checkpoint(path2, make_checkpoint(back, c.provenance, c.rng_state));
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(f1), {}), std::string(std::istreambuf_iterator<char>(f2), {}));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

void spit(const std::filesystem::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

TEST(Checkpoint, CorruptionIsDetected) {
  Model m(small_model(), 4);
  const auto path = temp_path("mstl_ckpt_corrupt.bin");
  save_checkpoint(path, make_checkpoint(m, {StageKind::kStlM}));
  const std::string good = slurp(path);
  ASSERT_EQ(good.substr(0, 4), "MSTL");

  std::string bad = good;
  bad[0] = 'X';
  spit(path, bad);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  bad = good;
  bad[4] = 9;  // version
  spit(path, bad);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  spit(path, good.substr(0, good.size() / 2));
  EXPECT_THROW(load_checkpoint(path), IoError);

  spit(path, good + "junk");
  EXPECT_THROW(load_checkpoint(path), CheckpointError);

  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), IoError);
}

TEST(Checkpoint, RestoreRejectsMismatchedBlobs) {
  Model m(small_model(), 5);
  Checkpoint c = make_checkpoint(m, {});
  c.parameters.pop_back();
  EXPECT_THROW(restore_model(c), CheckpointError);
  c = make_checkpoint(m, {});
  c.parameters[0].second = Tensor({1, 2}, 0.0);
  EXPECT_THROW(restore_model(c), CheckpointError);
}

// Stages

TEST(Stages, ZeroEpochsLeaveModelUnchanged) {
  const auto data = target_data(16, 1);
  Model m(small_model(), 6);
  const Model before = m;
  EXPECT_TRUE(run_stage_supervised(m, data, supervised(0, 1)).epochs.empty());
  StageConfig ssl = supervised(0, 1);
  ssl.stage = StageKind::kSstlM;
  EXPECT_TRUE(run_stage_ssl(m, data, ssl).epochs.empty());
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    EXPECT_EQ(m.parameters()[i]->value, before.parameters()[i]->value);
}

TEST(Stages, SupervisedIsDeterministic) {
  const auto data = target_data(16, 2);
  Model a(small_model(), 7), b(small_model(), 7);
  const History ha = run_stage_supervised(a, data, supervised(2, 7));
  const History hb = run_stage_supervised(b, data, supervised(2, 7));
  EXPECT_EQ(ha.to_json(), hb.to_json());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_EQ(a.parameters()[i]->value, b.parameters()[i]->value);
}

TEST(Stages, SupervisedRejectsMismatches) {
  const auto data = target_data(16, 3);
  Model three(small_model(3), 8);
  EXPECT_THROW(run_stage_supervised(three, data, supervised(1, 1)), ConfigError);
  Model two(small_model(), 8);
  StageConfig c = supervised(1, 1);
  c.augment.crop_to = 28;
  EXPECT_THROW(run_stage_supervised(two, data, c), ConfigError);
  auto bad = data;
  bad.labels[0] = 5;
  EXPECT_THROW(run_stage_supervised(two, bad, supervised(1, 1)), ConfigError);
}

TEST(Stages, SupervisedHistoryFollowsSchedule) {
  const auto data = target_data(16, 4);
  Model m(small_model(), 9);
  StageConfig c = supervised(3, 2);
  c.lr_milestones = {1, 2};
  const History h = run_stage_supervised(m, data, c);
  ASSERT_EQ(h.epochs.size(), 3u);
  EXPECT_EQ(h.epochs[0].lr, 0.05);
  EXPECT_EQ(h.epochs[1].lr, 0.05 * 0.1);
  EXPECT_EQ(h.epochs[2].lr, 0.05 * 0.1 * 0.1);
  const auto j = nlohmann::json::parse(h.to_json());
  EXPECT_EQ(j["stage"], "finetune");
  EXPECT_EQ(j["epochs"].size(), 3u);
  EXPECT_TRUE(j["epochs"][0].contains("accuracy"));
}

TEST(Stages, TrainingAccuracyImproves) {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = target_data(64, 50 + seed);  // 32 training images
    Model m(small_model(2, Variant::kBaseline), 60 + seed);
    const History h = run_stage_supervised(m, data, supervised(2, seed));
    improved += h.epochs[1].accuracy > h.epochs[0].accuracy;
  }
  EXPECT_GE(improved, 3);
}

TEST(Stages, SslHeaderEchoesDefaults) {
  const auto data = target_data(8, 5);
  Model m(small_model(), 10);
  StageConfig c = supervised(1, 3);
  c.stage = StageKind::kSstlM;
  c.lr = 0.01;
  const History h = run_stage_ssl(m, data, c);
  std::map<std::string, std::string> header(h.header.begin(), h.header.end());
  EXPECT_EQ(header.at("tau"), "0.07");
  EXPECT_EQ(header.at("alpha1"), "0.8");
  EXPECT_EQ(header.at("alpha2"), "0.8");
  EXPECT_EQ(header.at("m"), "0.999");
  EXPECT_EQ(header.at("untempered_negatives"), "false");
  ASSERT_EQ(h.epochs.size(), 1u);
  EXPECT_EQ(h.epochs[0].ssl.images_used, 4u);
  EXPECT_GT(h.epochs[0].loss, 0.0);
  const auto j = nlohmann::json::parse(h.to_json());
  EXPECT_TRUE(j["epochs"][0].contains("contrastive"));
}

TEST(Stages, SslChangesBackboneButNotHead) {
  const auto data = target_data(8, 6);
  Model m(small_model(), 11);
  const Model before = m;
  StageConfig c = supervised(1, 4);
  c.stage = StageKind::kSstlM;
  c.lr = 0.01;
  run_stage_ssl(m, data, c);
  EXPECT_EQ(m.head().weight.value, const_cast<Model&>(before).head().weight.value);
  EXPECT_NE(m.parameters()[0]->value, before.parameters()[0]->value);
}

// Finetune and evaluation

TEST(Finetune, HeadIsReplacedAndBackboneKept) {
  Model source(small_model(3), 12);
  const Model ft = prepare_finetune(source, small_model(2), 1);
  EXPECT_EQ(const_cast<Model&>(ft).head().out_features(), 2u);
  const auto a = source.backbone_parameters();
  const auto b = const_cast<Model&>(ft).backbone_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
  EXPECT_EQ(const_cast<Model&>(ft).head().bias.value, Tensor({2}, 0.0));
  EXPECT_THROW(prepare_finetune(source, small_model(2, Variant::kFiveAttns), 1), CheckpointError);
}

TEST(Finetune, ZeroEpochsFromCheckpointMatchesCheckpointModel) {
  const auto data = target_data(16, 7);
  Model m(small_model(), 13);
  run_stage_supervised(m, data, supervised(1, 5));
  const auto path = temp_path("mstl_ft_zero.bin");
  save_checkpoint(path, make_checkpoint(m, {StageKind::kStlM}));
  Model loaded = restore_model(load_checkpoint(path));
  Model ft = prepare_finetune(loaded, small_model(), 1);
  run_stage_supervised(ft, data, supervised(0, 1));
  // Same head on both sides, so evaluation agrees exactly.
  ft.head() = m.head();
  const AugmentPolicy p = supervised(0, 0).augment;
  const EvalResult a = evaluate(ft, data, Split::kTest, p), b = evaluate(m, data, Split::kTest, p);
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(predict(ft, data, Split::kTest, p).probabilities, predict(m, data, Split::kTest, p).probabilities);
  std::filesystem::remove(path);
}

TEST(Evaluate, ConstantLogitsGiveMajorityAccuracyAndHalfAuc) {
  auto data = target_data(16, 8);
  // Turn one positive test image negative so the split is unbalanced.
  for (std::size_t i : data.indices(Split::kTest))
    if (data.labels[i] == 1) {
      data.labels[i] = 0;
      break;
    }
  double zeros = 0;
  for (std::size_t i : data.indices(Split::kTest)) zeros += data.labels[i] == 0;
  Model m(small_model(), 14);
  m.head().weight.value.fill(0.0);
  m.head().bias.value = Tensor::from({0.3, -0.3});
  const AugmentPolicy p = supervised(0, 0).augment;
  const EvalResult r = evaluate(m, data, Split::kTest, p);
  EXPECT_DOUBLE_EQ(r.accuracy, zeros / 8.0);
  EXPECT_GT(zeros, 4.0);
  EXPECT_DOUBLE_EQ(r.auc, 0.5);
  EXPECT_EQ(r.count(), 8u);
}

TEST(Evaluate, DeterministicAndMatchesMetricOracles) {
  const auto data = target_data(24, 9);
  Model m(small_model(), 15);
  run_stage_supervised(m, data, supervised(1, 6));
  const AugmentPolicy p = supervised(0, 0).augment;
  const EvalResult a = evaluate(m, data, Split::kTest, p), b = evaluate(m, data, Split::kTest, p);
  EXPECT_EQ(to_json(a), to_json(b));
  const Predictions pr = predict(m, data, Split::kTest, p);
  std::size_t tp = 0, fp = 0, fn = 0, hits = 0;
  for (std::size_t i = 0; i < pr.preds.size(); ++i) {
    hits += pr.preds[i] == pr.labels[i];
    tp += pr.preds[i] == 1 && pr.labels[i] == 1;
    fp += pr.preds[i] == 1 && pr.labels[i] == 0;
    fn += pr.preds[i] == 0 && pr.labels[i] == 1;
    EXPECT_NEAR(pr.probabilities[i * 2] + pr.probabilities[i * 2 + 1], 1.0, 1e-12);
    EXPECT_EQ(pr.scores[i], pr.probabilities[i * 2 + 1]);
  }
  EXPECT_DOUBLE_EQ(a.accuracy, static_cast<double>(hits) / static_cast<double>(pr.preds.size()));
  EXPECT_DOUBLE_EQ(a.f1, oracle::f1_from_counts(tp, fp, fn));
  EXPECT_NEAR(a.auc, oracle::auc_pairwise(pr.scores, pr.labels), 1e-12);
}

TEST(Evaluate, Contracts) {
  auto data = target_data(16, 10);
  Model three(small_model(3), 16);
  const AugmentPolicy p = supervised(0, 0).augment;
  EXPECT_THROW(evaluate(three, data, Split::kTest, p), ContractError);
  Model two(small_model(), 16);
  EXPECT_THROW(evaluate(two, data, Split::kVal, p), ContractError);
  for (std::size_t i : data.indices(Split::kTest)) data.labels[i] = 0;
  EXPECT_THROW(evaluate(two, data, Split::kTest, p), UndefinedMetricError);
}

TEST(Leep, InputRowsAreSourceDistributions) {
  const auto data = target_data(16, 11);
  Model source(small_model(3), 17);
  const AugmentPolicy p = supervised(0, 0).augment;
  const LeepInput in = leep_input(source, data, Split::kTest, p);
  EXPECT_EQ(in.dummy_dist.shape(), (Shape{8, 3}));
  EXPECT_EQ(in.num_target_classes, 2u);
  EXPECT_NO_THROW(validate(in));
  const double l = leep_score(in);
  EXPECT_LE(l, 0.0);
  EXPECT_EQ(l, leep_score(leep_input(source, data, Split::kTest, p)));
}

}  // namespace
}  // namespace mstl
