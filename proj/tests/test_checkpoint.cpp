#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lpn/checkpoint.hpp"
#include "lpn/common.hpp"

using namespace lpn;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.d_mlp = 24;
  cfg.max_seq_len = 48;
  cfg.nlpn_r_max = 8;
  return cfg;
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("config json round-trips") {
  auto cfg = tiny_config();
  cfg.nlpn_targets = {Family::MlpUp, Family::AttnV};
  auto back = model_config_from_json(model_config_to_json(cfg));
  CHECK(back.vocab_size == cfg.vocab_size);
  CHECK(back.d_model == 16);
  CHECK(back.n_layers == 2);
  CHECK(back.n_heads == 2);
  CHECK(back.d_mlp == 24);
  CHECK(back.max_seq_len == 48);
  CHECK(back.nlpn_r_max == 8);
  REQUIRE(back.nlpn_targets.size() == 2);
  CHECK(back.nlpn_targets[1] == Family::AttnV);
}

TEST_CASE("dense model: save/load is the identity on parameters") {
  Model m(tiny_config(), 5);
  TempFile f("ckpt_dense_tmp.bin");
  save_checkpoint(m, f.path);
  Model back = load_checkpoint(f.path);
  CHECK(back.param_checksum() == m.param_checksum());
  CHECK_FALSE(back.surgered());
  for (const auto& [name, p] : m.params()) {
    const auto& q = back.params().get(name);
    REQUIRE(p.value.shape == q.value.shape);
    for (size_t i = 0; i < p.value.data.size(); ++i)
      CHECK(p.value.data[i] == q.value.data[i]);
  }
}

TEST_CASE("surgered model round-trips factors, registry and forward outputs") {
  Model m(tiny_config(), 9);
  m.apply_surgery(8, kMlpFamilies);
  m.params().add("log_vars", Tensor::zeros({1, 9}));  // extra trainable survives
  TempFile f("ckpt_surgered_tmp.bin");
  save_checkpoint(m, f.path);
  Model back = load_checkpoint(f.path);
  CHECK(back.surgered());
  CHECK(back.r_max() == 8);
  CHECK(back.nlpn_coords() == m.nlpn_coords());
  CHECK(back.params().has("log_vars"));
  CHECK_FALSE(back.params().has("b0.mlp_up.W"));
  CHECK(back.param_checksum() == m.param_checksum());

  auto toks = Tokenizer::get().encode("[]() = True");
  for (int64_t g : {0L, 3L, 8L}) {
    Tensor a = m.forward_last_logits(toks, ControlVector::global(g));
    Tensor b = back.forward_last_logits(toks, ControlVector::global(g));
    for (size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
  }
}

TEST_CASE("double round-trip is byte-identical on disk") {
  Model m(tiny_config(), 11);
  m.apply_surgery(4, kMlpFamilies);
  TempFile f1("ckpt_rt1_tmp.bin"), f2("ckpt_rt2_tmp.bin");
  save_checkpoint(m, f1.path);
  Model back = load_checkpoint(f1.path);
  save_checkpoint(back, f2.path);
  std::ifstream a(f1.path, std::ios::binary), b(f2.path, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);
  CHECK(!sa.empty());
}

TEST_CASE("version mismatch is refused with a message") {
  Model m(tiny_config(), 2);
  TempFile f("ckpt_ver_tmp.bin");
  save_checkpoint(m, f.path);
  // bump the version field in place (bytes 8..11)
  {
    std::fstream fs(f.path, std::ios::in | std::ios::out | std::ios::binary);
    fs.seekp(8);
    uint32_t bad = 999;
    fs.write(reinterpret_cast<const char*>(&bad), sizeof(bad));
  }
  try {
    load_checkpoint(f.path);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("garbage and truncated files are refused") {
  TempFile f("ckpt_garbage_tmp.bin");
  {
    std::ofstream out(f.path, std::ios::binary);
    out << "definitely not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(f.path), CheckpointError);

  Model m(tiny_config(), 3);
  TempFile g("ckpt_trunc_tmp.bin");
  save_checkpoint(m, g.path);
  auto size = std::filesystem::file_size(g.path);
  std::filesystem::resize_file(g.path, size / 2);
  CHECK_THROWS_AS(load_checkpoint(g.path), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint("no_such_file_anywhere.bin"), IoError);
}

TEST_CASE("no partial checkpoint is left behind by save") {
  Model m(tiny_config(), 4);
  TempFile f("ckpt_atomic_tmp.bin");
  save_checkpoint(m, f.path);
  CHECK(std::filesystem::exists(f.path));
  CHECK_FALSE(std::filesystem::exists(f.path + ".tmp"));
}
