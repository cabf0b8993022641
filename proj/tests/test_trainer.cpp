#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "vitlr/checkpoint.hpp"
#include "vitlr/data_synth.hpp"
#include "vitlr/trainer.hpp"

using namespace vitlr;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::path("vitlr_test_tmp") / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Slim model on the default frame size; fast enough for short train runs.
void write_tiny_model_config(const fs::path& path, int frames = 3) {
  std::ofstream out(path);
  out << "frames=" << frames << "\nheight=128\nwidth=256\nchannels=3\n"
      << "queries=4\nstates=4\nproj_kernel=3\n"
      << "stage1_width=8\nstage2_width=12\nstage3_width=16\n"
      << "encoder_depth=1\ndecoder_depth=1\nencoder_hidden=8\n"
      << "query_rows=2\nquery_cols=2\nquery_width=16\n";
}

ParamStore two_tensor_store() {
  ParamStore store;
  store.add("alpha", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  store.add("beta.running_mean", Tensor({4}, {0.5f, -0.5f, 1.5f, 0.0f}), false);
  return store;
}

}  // namespace

TEST_CASE("adam_step leaves parameters unchanged for zero gradients") {
  ParamStore params;
  params.add("w", Tensor({3}, {1.0f, -2.0f, 0.5f}));
  GradMap grads;
  grads.emplace("w", Tensor({3}));
  OptimState state;
  adam_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8);
  CHECK(params.at("w")[0] == 1.0f);
  CHECK(params.at("w")[1] == -2.0f);
  CHECK(state.step == 1);
}

TEST_CASE("adam_step hand-computed first step") {
  ParamStore params;
  params.add("theta", Tensor::scalar(0.0f));
  GradMap grads;
  grads.emplace("theta", Tensor::scalar(1.0f));
  OptimState state;
  adam_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8);
  // bias-corrected m_hat = 1, v_hat = 1 -> theta = -lr
  CHECK(params.at("theta")[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam_step is deterministic") {
  const auto run = [] {
    ParamStore params;
    params.add("w", Tensor({2}, {0.3f, -0.7f}));
    GradMap grads;
    grads.emplace("w", Tensor({2}, {0.11f, -0.42f}));
    OptimState state;
    for (int i = 0; i < 5; ++i) adam_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8);
    return std::pair<float, float>(params.at("w")[0], params.at("w")[1]);
  };
  CHECK(run() == run());
}

TEST_CASE("adam_step rejects key mismatches by name") {
  ParamStore params;
  params.add("w", Tensor({2}));
  OptimState state;
  GradMap missing;
  CHECK_THROWS_WITH_AS(adam_step(params, missing, state, 0.1, 0.9, 0.999, 1e-8),
                       doctest::Contains("'w'"), std::invalid_argument);
  GradMap extra;
  extra.emplace("w", Tensor({2}));
  extra.emplace("ghost", Tensor({1}));
  CHECK_THROWS_WITH_AS(adam_step(params, extra, state, 0.1, 0.9, 0.999, 1e-8),
                       doctest::Contains("ghost"), std::invalid_argument);
}

TEST_CASE("checkpoint roundtrip is bit-exact") {
  const fs::path dir = temp_dir("ckpt");
  const ParamStore store = two_tensor_store();
  save_checkpoint(store, dir / "x.ckpt");
  const ParamStore loaded = load_checkpoint(dir / "x.ckpt");
  REQUIRE(loaded.size() == store.size());
  CHECK(loaded.names() == store.names());
  for (const std::string& name : store.names()) {
    const Tensor& a = store.at(name);
    const Tensor& b = loaded.at(name);
    CHECK(a.shape() == b.shape());
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  }
  CHECK(loaded.trainable("alpha"));
  CHECK_FALSE(loaded.trainable("beta.running_mean"));
}

TEST_CASE("checkpoint file size follows the format arithmetic") {
  const fs::path dir = temp_dir("ckpt_size");
  const ParamStore store = two_tensor_store();
  save_checkpoint(store, dir / "x.ckpt");
  // 12-byte header + per tensor: 2 + name_len + 1 + 4*rank + 4*numel
  const size_t expected = 12 + (2 + 5 + 1 + 4 * 2 + 4 * 6) + (2 + 17 + 1 + 4 * 1 + 4 * 4);
  CHECK(fs::file_size(dir / "x.ckpt") == expected);
}

TEST_CASE("checkpoint load rejects corruption") {
  const fs::path dir = temp_dir("ckpt_bad");
  save_checkpoint(two_tensor_store(), dir / "x.ckpt");

  SUBCASE("bad magic") {
    auto bytes = [&] {
      std::ifstream in(dir / "x.ckpt", std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }();
    bytes[0] = 'X';
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "bad.ckpt"), doctest::Contains("magic"),
                         std::runtime_error);
  }

  SUBCASE("truncated") {
    auto bytes = [&] {
      std::ifstream in(dir / "x.ckpt", std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }();
    std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() - 7);
    CHECK_THROWS_WITH_AS(load_checkpoint(dir / "cut.ckpt"), doctest::Contains("truncated"),
                         std::runtime_error);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), std::runtime_error);
  }
}

TEST_CASE("model checkpoints restore into a model") {
  const fs::path dir = temp_dir("ckpt_model");
  write_tiny_model_config(dir / "model.cfg");
  const ModelConfig cfg = ModelConfig::from_file(dir / "model.cfg");
  const ViTLRModel model = ViTLRModel::create(cfg, 77);
  save_checkpoint(model.params(), dir / "m.ckpt");
  const ViTLRModel restored = ViTLRModel::from_params(cfg, load_checkpoint(dir / "m.ckpt"));
  CHECK(restored.params().size() == model.params().size());
}

TEST_CASE("train for one step produces one loss row and a checkpoint") {
  const fs::path dir = temp_dir("train_one");
  generate_dataset(Profile::Easy, 10, 13, dir / "data");
  write_tiny_model_config(dir / "model.cfg");
  TrainConfig cfg;
  cfg.steps = 1;
  cfg.seed = 3;
  cfg.data = (dir / "data").string();
  cfg.model_config = (dir / "model.cfg").string();
  cfg.out = (dir / "run").string();
  const TrainResult result = train(cfg);
  REQUIRE(result.rows.size() == 1);
  CHECK(result.rows[0].step == 1);
  CHECK(fs::exists(result.checkpoint));
  CHECK(fs::exists(result.loss_log));
  std::ifstream log(result.loss_log);
  std::string header, row, extra;
  std::getline(log, header);
  std::getline(log, row);
  CHECK(header == "step,focal,ciou,total");
  CHECK(!row.empty());
  CHECK_FALSE(std::getline(log, extra));
}

TEST_CASE("training is deterministic for a fixed config") {
  const fs::path dir = temp_dir("train_det");
  generate_dataset(Profile::Easy, 10, 21, dir / "data");
  write_tiny_model_config(dir / "model.cfg");
  const auto run = [&](const std::string& out) {
    TrainConfig cfg;
    cfg.steps = 12;
    cfg.seed = 9;
    cfg.lr = 1e-3;
    cfg.data = (dir / "data").string();
    cfg.model_config = (dir / "model.cfg").string();
    cfg.out = (dir / out).string();
    cfg.log_interval = 100;
    return train(cfg);
  };
  const TrainResult a = run("a");
  const TrainResult b = run("b");
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(std::abs(a.rows[i].total - b.rows[i].total) <= 1e-6);
    CHECK(std::abs(a.rows[i].focal - b.rows[i].focal) <= 1e-6);
    CHECK(std::abs(a.rows[i].ciou - b.rows[i].ciou) <= 1e-6);
  }
}

TEST_CASE("training aborts on a non-finite loss naming the step") {
  const fs::path dir = temp_dir("train_nan");
  generate_dataset(Profile::Easy, 10, 31, dir / "data");
  write_tiny_model_config(dir / "model.cfg");
  TrainConfig cfg;
  cfg.steps = 60;
  cfg.seed = 5;
  cfg.lr = 1e25;  // drives parameters to inf and activations to NaN
  cfg.data = (dir / "data").string();
  cfg.model_config = (dir / "model.cfg").string();
  cfg.out = (dir / "run").string();
  cfg.log_interval = 1000;
  CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("step"), std::runtime_error);
}

TEST_CASE("train rejects an empty dataset") {
  const fs::path dir = temp_dir("train_empty");
  fs::create_directories(dir / "data");
  write_index(dir / "data" / "index.json", DatasetIndex{});
  write_tiny_model_config(dir / "model.cfg");
  TrainConfig cfg;
  cfg.steps = 1;
  cfg.data = (dir / "data").string();
  cfg.model_config = (dir / "model.cfg").string();
  cfg.out = (dir / "run").string();
  CHECK_THROWS_WITH_AS(train(cfg), doctest::Contains("no training clips"), std::runtime_error);
}

TEST_CASE("train config file parsing validates keys and ranges") {
  const KeyValueFile kv = KeyValueFile::parse_string("steps=10\nlr=0.001\nbogus=1\n", "t.cfg");
  CHECK_THROWS_WITH_AS(TrainConfig::from_kv(kv), doctest::Contains("bogus"), std::runtime_error);
  const KeyValueFile bad = KeyValueFile::parse_string("steps=0\n", "t.cfg");
  CHECK_THROWS_AS(TrainConfig::from_kv(bad), std::invalid_argument);
  const KeyValueFile ok = KeyValueFile::parse_string(
      "steps=7\nlr=0.01\nbeta1=0.8\nloss_lambda=1.5\nseed=42\n", "t.cfg");
  const TrainConfig cfg = TrainConfig::from_kv(ok);
  CHECK(cfg.steps == 7);
  CHECK(cfg.loss.ciou_weight == 1.5);
  CHECK(cfg.seed == 42);
}

TEST_CASE("frame_to_tensor scales bytes into [0, 1]") {
  ImageU8 img(2, 1);
  img.px(0, 0)[0] = 255;
  img.px(1, 0)[2] = 51;
  const Tensor t = frame_to_tensor(img);
  CHECK(t.shape() == std::vector<int>({3, 1, 2}));
  CHECK(t(0, 0, 0) == doctest::Approx(1.0));
  CHECK(t(2, 0, 1) == doctest::Approx(0.2));
}
