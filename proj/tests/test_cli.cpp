#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "mfnet/checkpoint.hpp"
#include "mfnet/commands.hpp"
#include "mfnet/error.hpp"
#include "support/temp_dir.hpp"
#include "support/tiny_config.hpp"

using namespace mfnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  return files;
}

std::string value_of(const std::string& text, const std::string& key) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + "=", 0) == 0) return line.substr(key.size() + 1);
  return {};
}

std::vector<std::string> lines_after(const std::string& text, const std::string& header) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> out;
  bool on = false;
  while (std::getline(in, line)) {
    if (on && (line.empty() || line[0] == '#')) break;
    if (on) out.push_back(line);
    if (line == header) on = true;
  }
  return out;
}

// Same tensors, ignoring the embedded config (which names the output directory).
void expect_same_state(const fs::path& a, const fs::path& b) {
  const Checkpoint x = read_checkpoint(a), y = read_checkpoint(b);
  EXPECT_EQ(x.epoch, y.epoch);
  const auto same = [](const std::vector<NamedTensor>& p, const std::vector<NamedTensor>& q) {
    ASSERT_EQ(p.size(), q.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_EQ(p[i].name, q[i].name);
      EXPECT_TRUE(p[i].values == q[i].values) << p[i].name;
    }
  };
  same(x.params, y.params);
  same(x.velocity, y.velocity);
  same(x.buffers, y.buffers);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, sep)) out.push_back(part);
  return out;
}

}  // namespace

TEST(Config, SerialiseParseRoundTrip) {
  RunConfig c;
  c.lr = 0.0123456789;
  c.motion_variant = FusionVariant::Sum;
  c.k_eval_sweep = {2, 4, 8};
  c.data_seed = 99;
  c.flip = true;
  c.scales = {1.0, 0.5};
  const std::string text = serialize_config(c);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.k_eval_sweep, c.k_eval_sweep);
  EXPECT_EQ(back.effective_data_seed(), 99u);
  for (const auto& key : RunConfig::keys()) EXPECT_EQ(back.get(key), c.get(key)) << key;
}

TEST(Config, CommentsOverridesAndErrors) {
  const RunConfig c = parse_config("# comment\noptim.lr = 0.5  # trailing\n\nmotion.variant=off\n");
  EXPECT_EQ(c.lr, 0.5);
  EXPECT_FALSE(c.motion_variant);
  RunConfig d;
  apply_override(d, "sampling.k_eval=7");
  EXPECT_EQ(d.k_eval, 7);
  EXPECT_THROW(apply_override(d, "optim.lrr=1"), ConfigError);
  EXPECT_THROW(apply_override(d, "optim.lr"), ConfigError);
  EXPECT_THROW(apply_override(d, "optim.epochs=two"), ConfigError);
  EXPECT_THROW(parse_config("motion.variant=diagonal"), ConfigError);
}

TEST(Config, MotionNeedsTwoSegments) {
  RunConfig c;
  c.k_train = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c.motion_variant.reset();
  EXPECT_NO_THROW(c.validate());
  c.k_eval_sweep = {1, 3};
  EXPECT_NO_THROW(c.validate());
  c.motion_variant = FusionVariant::Concat;
  c.k_train = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, HashIgnoresOutputDirectoryOnly) {
  RunConfig a, b;
  b.out_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  b.seed = 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ArchitectureKeys) {
  RunConfig a, b;
  b.lr = 0.5;
  b.dropout_keep = 0.8;
  EXPECT_TRUE(same_architecture(a, b));
  b.motion_reduction = 8;
  EXPECT_FALSE(same_architecture(a, b));
}

TEST(Checkpoint, WriteReadRestoreIsBitwise) {
  testutil::TempDir tmp;
  const RunConfig cfg = testutil::tiny_run(tmp.path().string());
  const Model m = build_model(cfg.model_config(), 1);
  SgdState opt = make_sgd_state(m.registry(), 0.1, 0.9, 0.0);
  Rng rng(2);
  for (auto& v : opt.velocity) v = Tensor::normal(v.shape(), 0, 1, rng);
  const Checkpoint ck = capture_checkpoint(m, &opt, serialize_config(cfg), 3);
  write_checkpoint(tmp / "a.ckpt", ck);
  const Checkpoint back = read_checkpoint(tmp / "a.ckpt");
  EXPECT_EQ(back.config_text, ck.config_text);
  EXPECT_EQ(back.epoch, 3u);
  ASSERT_EQ(back.params.size(), ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    EXPECT_EQ(back.params[i].name, ck.params[i].name);
    EXPECT_EQ(back.params[i].shape, ck.params[i].shape);
    EXPECT_EQ(back.params[i].values, ck.params[i].values);
  }

  Model other = build_model(cfg.model_config(), 99);
  SgdState other_opt = make_sgd_state(other.registry(), 0.1, 0.9, 0.0);
  restore_checkpoint(back, other, &other_opt);
  write_checkpoint(tmp / "b.ckpt", capture_checkpoint(other, &other_opt, serialize_config(cfg), 3));
  EXPECT_EQ(slurp(tmp / "a.ckpt"), slurp(tmp / "b.ckpt"));
}

TEST(Checkpoint, MismatchListsEveryProblem) {
  testutil::TempDir tmp;
  RunConfig cfg = testutil::tiny_run(tmp.path().string());
  const Model concat = build_model(cfg.model_config(), 1);
  const Checkpoint ck = capture_checkpoint(concat, nullptr, serialize_config(cfg), 0);
  cfg.motion_stages = {1, 2};
  cfg.motion_variant = FusionVariant::Sum;
  Model sum = build_model(cfg.model_config(), 1);
  try {
    restore_checkpoint(ck, sum, nullptr);
    FAIL() << "restore should fail";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("unexpected"), std::string::npos) << msg;
    EXPECT_NE(msg.find("has shape"), std::string::npos) << msg;
  }
}

TEST(Checkpoint, CorruptFileIsAnInputError) {
  testutil::TempDir tmp;
  std::ofstream(tmp / "bad.ckpt") << "MFNETCKP\x01";
  EXPECT_THROW(read_checkpoint(tmp / "bad.ckpt"), InputError);
  std::ofstream(tmp / "foreign.ckpt") << "not a checkpoint at all";
  EXPECT_THROW(read_checkpoint(tmp / "foreign.ckpt"), InputError);
}

TEST(GenData, EmptyDatasetIsAConfigError) {
  testutil::TempDir tmp;
  RunConfig c;
  c.out_dir = tmp.path().string();
  std::ostringstream out, err;
  EXPECT_THROW(apply_override(c, "data.count_per_class=0"), ConfigError);
  c.count_per_class = 0;
  EXPECT_EQ(cmd_gen_data(c, out, err), 2);
  EXPECT_NE(err.str().find("count_per_class"), std::string::npos);
}

TEST(GenData, SameSeedSameBytes) {
  testutil::TempDir tmp;
  RunConfig c = testutil::tiny_run((tmp / "a").string());
  c.count_per_class = 3;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_gen_data(c, out, err), 0);
  c.out_dir = (tmp / "b").string();
  ASSERT_EQ(cmd_gen_data(c, out, err), 0);
  const auto a = tree(tmp / "a"), b = tree(tmp / "b");
  // classes.txt and labels.csv per split, 8 frames per clip
  EXPECT_EQ(a.size(), 4u + 18u * 8u);
  EXPECT_EQ(a, b);
}

TEST(GenData, FullSizeCountsOneDirectoryPerClip) {
  testutil::TempDir tmp;
  RunConfig c;
  c.out_dir = tmp.path().string();
  c.count_per_class = 200;
  c.num_frames = 2;
  c.image_size = 8;
  c.input_size = c.crop_size = 8;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_gen_data(c, out, err), 0) << err.str();
  std::size_t dirs = 0;
  for (const char* split_name : {"train", "val"})
    for (const auto& e : fs::directory_iterator(tmp / split_name)) dirs += e.is_directory();
  EXPECT_EQ(dirs, 1200u);
  EXPECT_NE(out.str().find("total,960,240"), std::string::npos) << out.str();
  const FrameFolder val = load_frame_folder(tmp / "val");
  EXPECT_TRUE(val.errors.empty());
  EXPECT_EQ(val.samples.size(), 240u);
}

TEST(TrainEval, EvalReproducesTrainingValidation) {
  testutil::TempDir tmp;
  RunConfig c = testutil::tiny_run((tmp / "run").string());
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(c, std::nullopt, out, err), 0) << err.str();
  const std::string val_top1 = value_of(out.str(), "val_top1");
  ASSERT_FALSE(val_top1.empty());
  for (const char* f : {"config.txt", "metrics.csv", "last.ckpt", "final.ckpt", "epoch_0001.ckpt", "epoch_0003.ckpt"})
    EXPECT_TRUE(fs::exists(tmp / "run" / f)) << f;

  c.k_eval_sweep = {2, 3, 4, 6};
  std::ostringstream eout, eerr;
  ASSERT_EQ(cmd_eval(c, tmp / "run" / "final.ckpt", eout, eerr), 0) << eerr.str();
  const auto table = lines_after(eout.str(), "k_eval,top1,top5,loss");
  ASSERT_EQ(table.size(), 5u);
  std::vector<int> ks;
  for (const auto& row : table) {
    const auto cols = split(row, ',');
    ks.push_back(std::stoi(cols[0]));
    if (cols[0] == "5") EXPECT_NEAR(std::stod(cols[1]), std::stod(val_top1), 1e-6);
  }
  EXPECT_EQ(ks, (std::vector<int>{5, 2, 3, 4, 6}));

  const Datasets data = load_datasets(c, err);
  std::vector<std::int64_t> per_class(6, 0);
  for (const auto& v : data.val) ++per_class[static_cast<std::size_t>(v.label())];
  const auto confusion = lines_after(eout.str(), "true\\pred,swipe_left,swipe_right,swipe_up,swipe_down,grow,shrink");
  ASSERT_EQ(confusion.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto cols = split(confusion[i], ',');
    std::int64_t total = 0;
    for (std::size_t j = 1; j < cols.size(); ++j) total += std::stoll(cols[j]);
    EXPECT_EQ(total, per_class[i]) << confusion[i];
  }
  EXPECT_EQ(lines_after(eout.str(), "class,partner,within_pair").size(), 6u);
}

TEST(TrainEval, IdenticalRunsWriteIdenticalMetrics) {
  testutil::TempDir tmp;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(testutil::tiny_run((tmp / "a").string()), std::nullopt, out, err), 0) << err.str();
  ASSERT_EQ(cmd_train(testutil::tiny_run((tmp / "b").string()), std::nullopt, out, err), 0) << err.str();
  const std::string a = slurp(tmp / "a" / "metrics.csv");
  EXPECT_EQ(a, slurp(tmp / "b" / "metrics.csv"));
  EXPECT_EQ(a.rfind("# config_hash=", 0), 0u);
  expect_same_state(tmp / "a" / "final.ckpt", tmp / "b" / "final.ckpt");
}

TEST(TrainEval, ResumeMatchesUninterruptedRun) {
  testutil::TempDir tmp;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_train(testutil::tiny_run((tmp / "full").string()), std::nullopt, out, err), 0) << err.str();

  RunConfig first = testutil::tiny_run((tmp / "split").string());
  first.epochs = 2;
  ASSERT_EQ(cmd_train(first, std::nullopt, out, err), 0) << err.str();
  ASSERT_EQ(cmd_train(testutil::tiny_run((tmp / "split").string()), tmp / "split" / "epoch_0002.ckpt", out, err), 0)
      << err.str();
  EXPECT_EQ(slurp(tmp / "full" / "metrics.csv"), slurp(tmp / "split" / "metrics.csv"));
  expect_same_state(tmp / "full" / "final.ckpt", tmp / "split" / "final.ckpt");
}

TEST(TrainEval, ResumeRejectsOtherArchitecture) {
  testutil::TempDir tmp;
  std::ostringstream out, err;
  RunConfig c = testutil::tiny_run((tmp / "a").string());
  c.epochs = 1;
  ASSERT_EQ(cmd_train(c, std::nullopt, out, err), 0);
  c.motion_variant = FusionVariant::Sum;
  EXPECT_EQ(cmd_train(c, tmp / "a" / "final.ckpt", out, err), 2);
}

TEST(TrainEval, ThreadsAndWorkersDoNotChangeResults) {
  testutil::TempDir tmp;
  std::ostringstream out, err;
  RunConfig serial = testutil::tiny_run((tmp / "serial").string());
  serial.epochs = 2;
  RunConfig parallel = serial;
  parallel.out_dir = (tmp / "parallel").string();
  parallel.threads = 3;
  parallel.workers = 2;
  ASSERT_EQ(cmd_train(serial, std::nullopt, out, err), 0) << err.str();
  ASSERT_EQ(cmd_train(parallel, std::nullopt, out, err), 0) << err.str();
  configure_threads(1);
  expect_same_state(tmp / "serial" / "final.ckpt", tmp / "parallel" / "final.ckpt");
  // The hash line differs (threads and workers are config keys); the rows must not.
  const auto rows = [](const std::string& text) { return text.substr(text.find('\n')); };
  EXPECT_EQ(rows(slurp(tmp / "serial" / "metrics.csv")), rows(slurp(tmp / "parallel" / "metrics.csv")));
}
