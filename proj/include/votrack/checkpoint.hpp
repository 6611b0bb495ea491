#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "votrack/config.hpp"
#include "votrack/model.hpp"

namespace votrack {

// Checkpoint file: magic + version, a JSON meta block (model config including
// normalization stats and anchor geometry, iteration counter, lr scale), then
// named blobs. Tensor data is stored as f64 regardless of the runtime scalar,
// so float-trained weights round-trip exactly. Host-endian; this is a
// single-machine artifact format, not an interchange one.

namespace ckpt_detail {

constexpr char kMagic[8] = "VOTCKPT";  // 7 chars + NUL
constexpr std::uint32_t kVersion = 1;

inline void write_bytes(std::ostream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}
template <class T>
void write_pod(std::ostream& out, T v) {
  write_bytes(out, &v, sizeof(T));
}
inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline void read_bytes(std::istream& in, void* p, std::size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw data_error("checkpoint: truncated file");
}
template <class T>
T read_pod(std::istream& in) {
  T v;
  read_bytes(in, &v, sizeof(T));
  return v;
}
inline std::string read_string(std::istream& in, std::size_t cap = 1 << 20) {
  const auto n = read_pod<std::uint32_t>(in);
  if (n > cap) throw data_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  read_bytes(in, s.data(), n);
  return s;
}

struct Blob {
  Shape shape;
  std::vector<double> data;
};

inline void write_blob(std::ostream& out, const std::string& name, const Shape& shape,
                       const std::vector<double>& data) {
  write_string(out, name);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) write_pod<std::int64_t>(out, d);
  write_pod<std::uint64_t>(out, data.size());
  write_bytes(out, data.data(), data.size() * sizeof(double));
}

}  // namespace ckpt_detail

template <class S>
void save_checkpoint(const std::string& path, const ModelConfig& cfg, ModelParamsT<S>& params,
                     int iter, double lr_scale,
                     const std::unordered_map<std::string, typename TensorT<S>::Data>& momentum) {
  using namespace ckpt_detail;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data_error("checkpoint: cannot write " + path);

  write_bytes(out, kMagic, sizeof(kMagic));
  write_pod<std::uint32_t>(out, kVersion);

  Json meta;
  meta["model"] = to_json(cfg);
  meta["iter"] = iter;
  meta["lr_scale"] = lr_scale;
  meta["value_layout"] = "key|scores|regs";
  write_string(out, meta.dump());

  std::uint32_t count = 0;
  params.for_each_param([&](const std::string&, TensorT<S>&) { ++count; });
  count += static_cast<std::uint32_t>(momentum.size());
  write_pod<std::uint32_t>(out, count);

  params.for_each_param([&](const std::string& name, TensorT<S>& p) {
    std::vector<double> d(p.data().begin(), p.data().end());
    write_blob(out, "param/" + name, p.shape(), d);
  });
  // ordered so the byte stream is independent of hash-map iteration
  std::map<std::string, const typename TensorT<S>::Data*> ordered;
  for (const auto& [name, buf] : momentum) ordered[name] = &buf;
  for (const auto& [name, buf] : ordered) {
    std::vector<double> d(buf->begin(), buf->end());
    write_blob(out, "momentum/" + name, {static_cast<int>(d.size())}, d);
  }
  out.flush();
  if (!out) throw data_error("checkpoint: write failed: " + path);
}

template <class S>
struct LoadedCheckpoint {
  ModelConfig cfg;
  ModelParamsT<S> params;
  int iter = 0;
  double lr_scale = 1.0;
  std::unordered_map<std::string, typename TensorT<S>::Data> momentum;
};

template <class S>
LoadedCheckpoint<S> load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("checkpoint: cannot open " + path);

  char magic[sizeof(kMagic)];
  read_bytes(in, magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw data_error("checkpoint: " + path + " is not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion)
    throw data_error("checkpoint: version " + std::to_string(version) + " unsupported (expect " +
                     std::to_string(kVersion) + "); refusing to load");

  Json meta = Json::parse(read_string(in), nullptr, false);
  if (meta.is_discarded() || !meta.is_object())
    throw data_error("checkpoint: corrupt meta block");
  StrictReader mr(meta, "checkpoint");
  LoadedCheckpoint<S> ck;
  if (!mr.has("model")) throw data_error("checkpoint: meta lacks model config");
  ck.cfg = model_config_from_json(meta.at("model"), "checkpoint.model");
  mr.child("model");
  ck.iter = mr.get<int>("iter", 0);
  ck.lr_scale = mr.get<double>("lr_scale", 1.0);
  const auto layout = mr.get<std::string>("value_layout", "key|scores|regs");
  if (layout != "key|scores|regs")
    throw data_error("checkpoint: unsupported value layout '" + layout + "'");
  mr.finish();
  ck.cfg.validate();

  const auto count = read_pod<std::uint32_t>(in);
  std::map<std::string, Blob> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(in);
    const auto rank = read_pod<std::uint32_t>(in);
    if (rank > 8) throw data_error("checkpoint: implausible rank in " + name);
    Blob b;
    for (std::uint32_t d = 0; d < rank; ++d)
      b.shape.push_back(static_cast<int>(read_pod<std::int64_t>(in)));
    const auto n = read_pod<std::uint64_t>(in);
    if (n != static_cast<std::uint64_t>(numel(b.shape)))
      throw data_error("checkpoint: size/shape mismatch in " + name);
    b.data.resize(n);
    read_bytes(in, b.data.data(), n * sizeof(double));
    if (!blobs.emplace(name, std::move(b)).second)
      throw data_error("checkpoint: duplicate blob " + name);
  }

  Rng dummy(0);
  ck.params = init_model<S>(ck.cfg, dummy);
  ck.params.for_each_param([&](const std::string& name, TensorT<S>& p) {
    const auto it = blobs.find("param/" + name);
    if (it == blobs.end()) throw data_error("checkpoint: missing parameter " + name);
    if (it->second.shape != p.shape())
      throw data_error("checkpoint: shape mismatch for " + name + ": file " +
                       shape_str(it->second.shape) + " vs model " + shape_str(p.shape()));
    auto& data = p.node()->data;
    for (std::size_t i = 0; i < data.size(); ++i)
      data[i] = static_cast<S>(it->second.data[i]);
    blobs.erase(it);
  });
  for (auto it = blobs.begin(); it != blobs.end();) {
    if (it->first.rfind("momentum/", 0) == 0) {
      typename TensorT<S>::Data buf(it->second.data.size());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<S>(it->second.data[i]);
      ck.momentum.emplace(it->first.substr(9), std::move(buf));
      it = blobs.erase(it);
    } else {
      throw data_error("checkpoint: unknown blob " + it->first);
    }
  }
  std::unordered_map<std::string, std::size_t> sizes;
  ck.params.for_each_param(
      [&](const std::string& name, TensorT<S>& p) { sizes[name] = p.data().size(); });
  for (const auto& [name, buf] : ck.momentum) {
    const auto it = sizes.find(name);
    if (it == sizes.end() || it->second != buf.size())
      throw data_error("checkpoint: momentum blob " + name + " does not match any parameter");
  }
  return ck;
}

}  // namespace votrack
