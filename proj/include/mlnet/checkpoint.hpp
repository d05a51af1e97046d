#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "mlnet/network.hpp"
#include "mlnet/optimizer.hpp"

// Binary checkpoint: magic "MLNETCKPT", format version, the model config,
// every named parameter tensor as little-endian float64, optional optimizer
// state, and the run seed. Serialization is canonical, so save/load/save
// produces byte-identical files.

namespace mlnet {

namespace detail {

inline constexpr char kCkptMagic[] = "MLNETCKPT";  // 9 bytes, no terminator
inline constexpr std::uint32_t kCkptVersion = 1;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void raw(const char* data, std::size_t n) {
    bytes_.insert(bytes_.end(), data, data + n);
  }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> bytes)
      : bytes_(std::move(bytes)) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw DataError("invalid checkpoint at byte " + std::to_string(at_) +
                    ": " + why);
  }

  void need(std::size_t n) const {
    if (at_ + n > bytes_.size()) {
      throw DataError("truncated checkpoint: need " + std::to_string(n) +
                      " bytes at offset " + std::to_string(at_) + ", only " +
                      std::to_string(bytes_.size() - at_) + " available");
    }
  }

  std::uint8_t u8() {
    need(1);
    return bytes_[at_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[at_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[at_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + at_), n);
    at_ += n;
    return s;
  }
  bool exhausted() const { return at_ == bytes_.size(); }

 private:
  std::vector<std::uint8_t> bytes_;
  std::size_t at_ = 0;
};

inline void write_tensor(ByteWriter& w, const std::string& name,
                         const Tensor& t) {
  w.str(name);
  const Shape s = t.shape();
  w.u32(static_cast<std::uint32_t>(s.n));
  w.u32(static_cast<std::uint32_t>(s.c));
  w.u32(static_cast<std::uint32_t>(s.h));
  w.u32(static_cast<std::uint32_t>(s.w));
  for (double v : t.values()) w.f64(v);
}

}  // namespace detail

struct Checkpoint {
  Model model;
  std::optional<SgdNesterov::Options> optimizer_options;
  std::vector<std::vector<double>> optimizer_velocities;
  std::int64_t optimizer_steps = 0;
  std::uint64_t run_seed = 0;
};

inline std::vector<std::uint8_t> serialize_checkpoint(
    Model& model, const SgdNesterov* optimizer = nullptr,
    std::uint64_t run_seed = 0) {
  detail::ByteWriter w;
  w.raw(detail::kCkptMagic, 9);
  w.u32(detail::kCkptVersion);

  const ModelConfig& cfg = model.config;
  w.u32(static_cast<std::uint32_t>(cfg.input_width));
  w.u32(static_cast<std::uint32_t>(cfg.input_height));
  for (std::int64_t c : cfg.stage_channels) {
    w.u32(static_cast<std::uint32_t>(c));
  }
  w.u32(static_cast<std::uint32_t>(cfg.encode_channels));
  w.f64(cfg.dropout_retain);
  for (double m : cfg.channel_means) w.f64(m);
  w.u8(cfg.prior_normalized ? 1 : 0);
  w.u64(cfg.seed);

  auto params = model.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const ParamRef& p : params) detail::write_tensor(w, p.name, p.tensor);

  w.u8(optimizer ? 1 : 0);
  if (optimizer) {
    w.f64(optimizer->options().learning_rate);
    w.f64(optimizer->options().momentum);
    w.f64(optimizer->options().weight_decay);
    w.u64(static_cast<std::uint64_t>(optimizer->step_count()));
    w.u32(static_cast<std::uint32_t>(optimizer->velocities().size()));
    for (const auto& v : optimizer->velocities()) {
      w.u64(v.size());
      for (double x : v) w.f64(x);
    }
  }
  w.u64(run_seed);
  return w.bytes();
}

inline void save_checkpoint(Model& model, const std::filesystem::path& path,
                            const SgdNesterov* optimizer = nullptr,
                            std::uint64_t run_seed = 0) {
  const auto bytes = serialize_checkpoint(model, optimizer, run_seed);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline Checkpoint deserialize_checkpoint(std::vector<std::uint8_t> bytes) {
  detail::ByteReader r(std::move(bytes));
  r.need(9);
  char magic[10] = {};
  for (int i = 0; i < 9; ++i) magic[i] = static_cast<char>(r.u8());
  if (std::string(magic, 9) != detail::kCkptMagic) {
    throw DataError("checkpoint magic mismatch: expected MLNETCKPT");
  }
  const std::uint32_t version = r.u32();
  if (version != detail::kCkptVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  }

  ModelConfig cfg;
  cfg.input_width = r.u32();
  cfg.input_height = r.u32();
  for (auto& c : cfg.stage_channels) c = r.u32();
  cfg.encode_channels = r.u32();
  cfg.dropout_retain = r.f64();
  for (auto& m : cfg.channel_means) m = r.f64();
  cfg.prior_normalized = r.u8() != 0;
  cfg.seed = r.u64();

  Checkpoint ckpt;
  RngState init_rng(cfg.seed);
  ckpt.model = build_model(cfg, init_rng);
  auto params = ckpt.model.parameters();
  const std::uint32_t n_params = r.u32();
  if (n_params != params.size()) {
    r.fail("parameter count " + std::to_string(n_params) +
           " does not match architecture (" + std::to_string(params.size()) +
           ")");
  }
  for (ParamRef& p : params) {
    const std::string name = r.str();
    if (name != p.name) {
      r.fail("parameter name '" + name + "' does not match expected '" +
             p.name + "'");
    }
    Shape s;
    s.n = r.u32();
    s.c = r.u32();
    s.h = r.u32();
    s.w = r.u32();
    if (!(s == p.tensor.shape())) {
      r.fail("parameter " + name + " shape " + s.str() +
             " does not match expected " + p.tensor.shape().str());
    }
    for (auto& v : p.tensor.values_mut()) v = r.f64();
  }

  if (r.u8() != 0) {
    SgdNesterov::Options opt;
    opt.learning_rate = r.f64();
    opt.momentum = r.f64();
    opt.weight_decay = r.f64();
    ckpt.optimizer_steps = static_cast<std::int64_t>(r.u64());
    ckpt.optimizer_options = opt;
    const std::uint32_t n_vel = r.u32();
    for (std::uint32_t k = 0; k < n_vel; ++k) {
      const std::uint64_t count = r.u64();
      std::vector<double> v(count);
      for (auto& x : v) x = r.f64();
      ckpt.optimizer_velocities.push_back(std::move(v));
    }
  }
  ckpt.run_seed = r.u64();
  if (!r.exhausted()) r.fail("trailing bytes after checkpoint payload");
  return ckpt;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(std::move(bytes));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace mlnet
