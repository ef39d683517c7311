#include "fedrank/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "fedrank/errors.hpp"

namespace fedrank {

using nlohmann::json;

nlohmann::json model_config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"n_layers", c.n_layers},
              {"d_ff", c.d_ff},
              {"vocab_size", c.vocab_size},
              {"max_seq_len", c.max_seq_len},
              {"d_patch", c.d_patch},
              {"insertion_mode", to_string(c.insertion_mode)},
              {"patch_kind", to_string(c.patch_kind)},
              {"pal_heads", c.pal_heads},
              {"n_shared_layers", c.n_shared_layers}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& prefix) {
  ModelConfig c;
  auto get_size = [&](const char* key, std::size_t fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number_integer() || (!it->is_number_unsigned() && it->get<std::int64_t>() < 0))
      throw ConfigError(prefix + key + ": must be a non-negative integer");
    return it->get<std::size_t>();
  };
  c.d_model = get_size("d_model", c.d_model);
  c.n_layers = get_size("n_layers", c.n_layers);
  c.d_ff = get_size("d_ff", c.d_ff);
  c.vocab_size = get_size("vocab_size", c.vocab_size);
  c.max_seq_len = get_size("max_seq_len", c.max_seq_len);
  c.d_patch = get_size("d_patch", c.d_patch);
  c.n_shared_layers = get_size("n_shared_layers", c.n_layers);
  if (auto it = j.find("n_heads"); it != j.end()) {
    if (!it->is_number_integer()) throw ConfigError(prefix + "n_heads: must be an integer");
    c.n_heads = it->get<int>();
  }
  if (auto it = j.find("pal_heads"); it != j.end()) {
    if (!it->is_number_integer()) throw ConfigError(prefix + "pal_heads: must be an integer");
    c.pal_heads = it->get<int>();
  }
  if (auto it = j.find("insertion_mode"); it != j.end()) {
    if (!it->is_string()) throw ConfigError(prefix + "insertion_mode: must be a string");
    c.insertion_mode = insertion_mode_from(it->get<std::string>());
  }
  if (auto it = j.find("patch_kind"); it != j.end()) {
    if (!it->is_string()) throw ConfigError(prefix + "patch_kind: must be a string");
    c.patch_kind = patch_kind_from(it->get<std::string>());
  }
  return c;
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size())
      throw ProtocolError(std::string("message truncated while reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

void encode_tensor(std::vector<std::uint8_t>& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
  for (auto d : t.shape) put_u64(out, d);
  for (double v : t.values) put_f64(out, v);
}

}  // namespace

std::vector<std::uint8_t> wire_encode(const ParameterSet& params,
                                      const std::vector<std::string>& names) {
  std::vector<std::uint8_t> out;
  put_u64(out, names.size());
  for (const auto& name : names) {
    const auto* entry = params.find(name);
    if (!entry) throw ProtocolError("wire_encode: no parameter named " + name);
    if (entry->is_private)
      throw ProtocolError("wire_encode: refusing to transmit private parameter " + name);
    encode_tensor(out, name, entry->tensor);
  }
  return out;
}

WireView wire_decode(std::span<const std::uint8_t> bytes) {
  Reader r{bytes};
  const auto count = r.u64("tensor count");
  WireView view;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.u32("name length");
    auto name = r.str(name_len, "name");
    const auto rank = r.u32("rank");
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      shape.push_back(r.u64("dimension"));
      numel *= shape.back();
    }
    std::vector<double> values;
    values.reserve(numel);
    for (std::size_t k = 0; k < numel; ++k) values.push_back(r.f64("payload"));
    view.names.push_back(std::move(name));
    view.tensors.emplace_back(std::move(shape), std::move(values));
  }
  if (r.pos != bytes.size()) throw ProtocolError("message has trailing bytes");
  return view;
}

void write_checkpoint(const std::string& path, const ModelConfig& config,
                      const ParameterSet& params) {
  json manifest_params = json::array();
  for (const auto& e : params)
    manifest_params.push_back(
        {{"name", e.name}, {"shape", e.tensor.shape}, {"private", e.is_private}});
  const std::string manifest =
      json{{"config", model_config_to_json(config)}, {"params", manifest_params}}.dump();

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'F', 'R', 'C', 'K'});
  put_u32(out, 1);
  put_u64(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  for (const auto& e : params)
    for (double v : e.tensor.values) put_f64(out, v);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to checkpoint " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  try {
    Reader r{bytes};
    if (r.str(4, "magic") != "FRCK")
      throw IoError(path + ": not a checkpoint file (bad magic)");
    const auto version = r.u32("version");
    if (version != 1)
      throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    const auto manifest_len = r.u64("manifest length");
    json manifest;
    try {
      manifest = json::parse(r.str(manifest_len, "manifest"));
    } catch (const std::exception& e) {
      throw IoError(path + ": bad manifest: " + e.what());
    }
    Checkpoint ck;
    ck.config = model_config_from_json(manifest.at("config"), "checkpoint config: ");
    for (const auto& pj : manifest.at("params")) {
      const auto name = pj.at("name").get<std::string>();
      const auto shape = pj.at("shape").get<std::vector<std::size_t>>();
      const bool priv = pj.at("private").get<bool>();
      const std::size_t numel = Tensor::numel(shape);
      std::vector<double> values;
      values.reserve(numel);
      for (std::size_t k = 0; k < numel; ++k) values.push_back(r.f64("payload"));
      ck.params.add(name, Tensor(shape, std::move(values)), priv);
    }
    if (r.pos != bytes.size()) throw IoError(path + ": trailing bytes after payload");
    return ck;
  } catch (const ProtocolError& e) {
    // Reader errors surface as truncation; a damaged file is an io problem.
    throw IoError(path + ": " + e.what());
  }
}

}  // namespace fedrank
