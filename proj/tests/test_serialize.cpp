#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "fedrank/errors.hpp"
#include "fedrank/model.hpp"
#include "fedrank/serialize.hpp"

using namespace fedrank;
namespace fs = std::filesystem;

namespace {

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("fedrank_ck_" + tag + "_" + std::to_string(::getpid()) + ".bin");
  }
  ~TempFile() {
    std::error_code ec;
    fs::remove(path, ec);
  }
};

ParameterSet sample_params() {
  ParameterSet p;
  p.add("embed.tok", Tensor::vec({1.5, -2.25, 0.0}), false);
  Tensor w = Tensor::zeros({2, 2});
  w.values = {0.1, 0.2, 0.3, 0.4};
  p.add("head.w", std::move(w), false);
  p.add("patch.0.down", Tensor::vec({9.0}), true);
  return p;
}

ModelConfig sample_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 12;
  c.vocab_size = 30;
  c.max_seq_len = 16;
  c.d_patch = 4;
  c.insertion_mode = InsertionMode::kOuter;
  c.patch_kind = PatchKind::kPal;
  c.pal_heads = 2;
  c.n_shared_layers = 0;
  return c;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("wire encoding round-trips names, shapes, and exact values") {
  auto params = sample_params();
  auto bytes = wire_encode(params, {"embed.tok", "head.w"});
  auto view = wire_decode(bytes);
  REQUIRE(view.names == std::vector<std::string>{"embed.tok", "head.w"});
  REQUIRE(view.tensors.size() == 2);
  CHECK(view.tensors[0].shape == std::vector<std::size_t>{3});
  CHECK(view.tensors[0].values == params.get("embed.tok").values);
  CHECK(view.tensors[1].shape == std::vector<std::size_t>{2, 2});
  CHECK(view.tensors[1].values == params.get("head.w").values);
}

TEST_CASE("wire layout is the documented little-endian framing") {
  ParameterSet p;
  p.add("ab", Tensor::vec({1.0}), false);
  auto bytes = wire_encode(p, {"ab"});
  // u64 count, u32 name_len, "ab", u32 rank, u64 dim, f64 payload
  REQUIRE(bytes.size() == 8 + 4 + 2 + 4 + 8 + 8);
  std::size_t at = 0;
  auto u32_at = [&](std::size_t i) {
    return static_cast<std::uint32_t>(bytes[i]) | (static_cast<std::uint32_t>(bytes[i + 1]) << 8) |
           (static_cast<std::uint32_t>(bytes[i + 2]) << 16) |
           (static_cast<std::uint32_t>(bytes[i + 3]) << 24);
  };
  auto u64_at = [&](std::size_t i) {
    std::uint64_t v = 0;
    for (int k = 7; k >= 0; --k) v = (v << 8) | bytes[i + static_cast<std::size_t>(k)];
    return v;
  };
  CHECK(u64_at(at) == 1);  // tensor count
  at += 8;
  CHECK(u32_at(at) == 2);  // name length
  at += 4;
  CHECK(bytes[at] == 'a');
  CHECK(bytes[at + 1] == 'b');
  at += 2;
  CHECK(u32_at(at) == 1);  // rank
  at += 4;
  CHECK(u64_at(at) == 1);  // dim
  at += 8;
  double value = 0.0;
  std::uint64_t raw = u64_at(at);
  std::memcpy(&value, &raw, 8);
  CHECK(value == 1.0);
}

TEST_CASE("wire encoding refuses private or unknown parameters") {
  auto params = sample_params();
  CHECK_THROWS_WITH_AS(wire_encode(params, {"patch.0.down"}),
                       doctest::Contains("patch.0.down"), ProtocolError);
  CHECK_THROWS_AS(wire_encode(params, {"no.such"}), ProtocolError);
}

TEST_CASE("wire decoding rejects truncated and padded buffers") {
  auto params = sample_params();
  auto bytes = wire_encode(params, {"embed.tok"});
  for (std::size_t cut : {std::size_t{0}, std::size_t{7}, bytes.size() - 1}) {
    std::vector<std::uint8_t> clipped(bytes.begin(),
                                      bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(wire_decode(clipped), ProtocolError);
  }
  auto padded = bytes;
  padded.push_back(0);
  CHECK_THROWS_AS(wire_decode(padded), ProtocolError);
}

TEST_CASE("model config json survives a round trip") {
  auto c = sample_config();
  auto j = model_config_to_json(c);
  auto back = model_config_from_json(j, "model.");
  CHECK(back.d_model == c.d_model);
  CHECK(back.n_heads == c.n_heads);
  CHECK(back.n_layers == c.n_layers);
  CHECK(back.d_ff == c.d_ff);
  CHECK(back.vocab_size == c.vocab_size);
  CHECK(back.max_seq_len == c.max_seq_len);
  CHECK(back.d_patch == c.d_patch);
  CHECK(back.insertion_mode == c.insertion_mode);
  CHECK(back.patch_kind == c.patch_kind);
  CHECK(back.pal_heads == c.pal_heads);
  CHECK(back.n_shared_layers == c.n_shared_layers);
}

TEST_CASE("checkpoints round-trip config, flags, and exact payloads") {
  TempFile f("roundtrip");
  auto config = sample_config();
  auto params = sample_params();
  write_checkpoint(f.path.string(), config, params);

  auto ck = read_checkpoint(f.path.string());
  CHECK(ck.config.d_model == config.d_model);
  CHECK(ck.config.insertion_mode == config.insertion_mode);
  CHECK(ck.config.patch_kind == config.patch_kind);
  REQUIRE(ck.params.size() == params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(ck.params[i].name == params[i].name);
    CHECK(ck.params[i].is_private == params[i].is_private);
    CHECK(ck.params[i].tensor.shape == params[i].tensor.shape);
    CHECK(ck.params[i].tensor.values == params[i].tensor.values);
  }

  // write-read-write is byte identical
  TempFile g("rewrite");
  write_checkpoint(g.path.string(), ck.config, ck.params);
  CHECK(read_bytes(f.path) == read_bytes(g.path));
}

TEST_CASE("checkpoint reader rejects corrupted files") {
  TempFile f("corrupt");
  write_checkpoint(f.path.string(), sample_config(), sample_params());
  auto good = read_bytes(f.path);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  write_bytes(f.path, bad_magic);
  CHECK_THROWS_AS(read_checkpoint(f.path.string()), IoError);

  auto bad_version = good;
  bad_version[4] = 0xee;
  write_bytes(f.path, bad_version);
  CHECK_THROWS_AS(read_checkpoint(f.path.string()), IoError);

  auto truncated = good;
  truncated.resize(good.size() - 3);
  write_bytes(f.path, truncated);
  CHECK_THROWS_AS(read_checkpoint(f.path.string()), IoError);

  auto padded = good;
  padded.push_back(7);
  write_bytes(f.path, padded);
  CHECK_THROWS_AS(read_checkpoint(f.path.string()), IoError);

  CHECK_THROWS_AS(read_checkpoint("/nonexistent/dir/x.ck"), IoError);
}

TEST_CASE("special float values survive both formats") {
  ParameterSet p;
  p.add("x", Tensor::vec({0.0, -0.0, 1e-308, -1.7976931348623157e308, 2.2250738585072014e-308}),
        false);
  auto view = wire_decode(wire_encode(p, {"x"}));
  for (std::size_t i = 0; i < 5; ++i) {
    std::uint64_t a, b;
    std::memcpy(&a, &view.tensors[0].values[i], 8);
    std::memcpy(&b, &p.get("x").values[i], 8);
    CHECK(a == b);  // bit-exact, including the sign of zero
  }

  TempFile f("floats");
  write_checkpoint(f.path.string(), sample_config(), p);
  auto ck = read_checkpoint(f.path.string());
  for (std::size_t i = 0; i < 5; ++i) {
    std::uint64_t a, b;
    std::memcpy(&a, &ck.params.get("x").values[i], 8);
    std::memcpy(&b, &p.get("x").values[i], 8);
    CHECK(a == b);
  }
}
