#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "votrack/checkpoint.hpp"

using namespace votrack;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.backbone.input_size = 32;
  c.backbone.widths = {4, 6, 8, 10};
  c.backbone.ck = 8;
  c.anchors.input_size = 32;
  c.retrieval.k = 2;
  c.retrieval.heads = 2;
  c.retrieval.attn_width = 8;
  c.head_width = 6;
  return c;
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// flip one byte of a pattern match inside the file
void corrupt_name(const std::string& path, const std::string& needle) {
  auto bytes = slurp(path);
  const auto it = std::search(bytes.begin(), bytes.end(), needle.begin(), needle.end());
  REQUIRE(it != bytes.end());
  *(it + static_cast<std::ptrdiff_t>(needle.size()) - 1) ^= 0x01;
  dump(path, bytes);
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly", "[checkpoint]") {
  const ModelConfig cfg = tiny_config();
  Rng rng(42);
  auto params = init_model<double>(cfg, rng);

  std::unordered_map<std::string, std::vector<double>> momentum;
  params.for_each_param([&](const std::string& name, TensorT<double>& p) {
    if (name == "head.c1_w" || name == "retrieval.wq") {
      std::vector<double> buf(p.data().size());
      for (auto& v : buf) v = rng.normal();
      momentum[name] = std::move(buf);
    }
  });

  TempFile f("test_ckpt_roundtrip.bin");
  save_checkpoint("test_ckpt_roundtrip.bin", cfg, params, 137, 0.25, momentum);
  auto ck = load_checkpoint<double>(f.path);

  REQUIRE(ck.iter == 137);
  REQUIRE(ck.lr_scale == 0.25);
  REQUIRE(to_json(ck.cfg) == to_json(cfg));

  std::size_t compared = 0;
  ck.params.for_each_param([&](const std::string& name, TensorT<double>& p) {
    params.for_each_param([&](const std::string& name2, TensorT<double>& q) {
      if (name != name2) return;
      REQUIRE(p.shape() == q.shape());
      for (std::size_t i = 0; i < p.data().size(); ++i) REQUIRE(p.data()[i] == q.data()[i]);
      ++compared;
    });
  });
  REQUIRE(compared == 53);

  REQUIRE(ck.momentum.size() == 2);
  for (const auto& [name, buf] : momentum) {
    REQUIRE(ck.momentum.count(name) == 1);
    const auto& got = ck.momentum.at(name);
    REQUIRE(got.size() == buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) REQUIRE(got[i] == buf[i]);
  }
}

TEST_CASE("checkpoint preserves norm stats and anchor geometry", "[checkpoint]") {
  ModelConfig cfg = tiny_config();
  cfg.norm.mean = {0.3, 0.42, 0.5};
  cfg.norm.stdev = {0.2, 0.21, 0.22};
  cfg.anchors.ratios = {0.5, 1.0, 2.0};
  cfg.anchors.base_frac = 0.3;
  Rng rng(1);
  auto params = init_model<double>(cfg, rng);

  TempFile f("test_ckpt_meta.bin");
  save_checkpoint(f.path, cfg, params, 0, 1.0, {});
  const auto ck = load_checkpoint<double>(f.path);
  REQUIRE(ck.cfg.norm.mean[1] == 0.42);
  REQUIRE(ck.cfg.norm.stdev[2] == 0.22);
  REQUIRE(ck.cfg.anchors.ratios == std::vector<double>{0.5, 1.0, 2.0});
  REQUIRE(ck.cfg.anchors.base_frac == 0.3);
}

TEST_CASE("float parameters survive the double container", "[checkpoint]") {
  const ModelConfig cfg = tiny_config();
  Rng rng(5);
  auto params = init_model<float>(cfg, rng);
  TempFile f("test_ckpt_float.bin");
  save_checkpoint(f.path, cfg, params, 3, 1.0, {});
  auto ck = load_checkpoint<float>(f.path);
  ck.params.for_each_param([&](const std::string& name, TensorT<float>& p) {
    params.for_each_param([&](const std::string& name2, TensorT<float>& q) {
      if (name != name2) return;
      for (std::size_t i = 0; i < p.data().size(); ++i) REQUIRE(p.data()[i] == q.data()[i]);
    });
  });
}

TEST_CASE("checkpoint rejects bad files", "[checkpoint]") {
  const ModelConfig cfg = tiny_config();
  Rng rng(9);
  auto params = init_model<double>(cfg, rng);
  TempFile f("test_ckpt_bad.bin");
  save_checkpoint(f.path, cfg, params, 10, 1.0, {});

  SECTION("missing file") {
    REQUIRE_THROWS_AS(load_checkpoint<double>("no_such_ckpt.bin"), data_error);
  }
  SECTION("wrong magic") {
    auto bytes = slurp(f.path);
    bytes[0] = 'X';
    dump(f.path, bytes);
    REQUIRE_THROWS_WITH(load_checkpoint<double>(f.path),
                        Catch::Matchers::ContainsSubstring("not a checkpoint"));
  }
  SECTION("future version refused") {
    auto bytes = slurp(f.path);
    bytes[8] = 2;  // version u32 follows the 8-byte magic
    dump(f.path, bytes);
    REQUIRE_THROWS_WITH(load_checkpoint<double>(f.path),
                        Catch::Matchers::ContainsSubstring("version 2"));
  }
  SECTION("truncation") {
    auto bytes = slurp(f.path);
    bytes.resize(bytes.size() * 3 / 5);
    dump(f.path, bytes);
    REQUIRE_THROWS_AS(load_checkpoint<double>(f.path), data_error);
  }
  SECTION("renamed parameter blob") {
    corrupt_name(f.path, "param/head.c1_w");
    REQUIRE_THROWS_AS(load_checkpoint<double>(f.path), data_error);
  }
  SECTION("garbage") {
    dump(f.path, {'h', 'i'});
    REQUIRE_THROWS_AS(load_checkpoint<double>(f.path), data_error);
  }
}
