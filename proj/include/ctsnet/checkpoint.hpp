#pragma once

// Portable checkpoint: magic, version, model kind, config echo, ordered
// (name, shape, float32 little-endian values) list, FNV-1a content digest.
// The payload is float32 regardless of the compute precision; double builds
// upcast on load, which round-trips float payloads exactly.

#include <cstdint>
#include <string>
#include <vector>

#include "ctsnet/config.hpp"
#include "ctsnet/networks.hpp"

namespace ctsnet {

struct RawCheckpoint {
  struct Param {
    std::string name;
    std::vector<uint32_t> dims;
    std::vector<float> values;
  };
  std::string kind;
  std::string config_text;
  std::string provenance_text;
  std::vector<Param> params;
};

void raw_checkpoint_write(const std::string& path, const RawCheckpoint& ck);
RawCheckpoint raw_checkpoint_read(const std::string& path);

inline KeyValueConfig model_config_to_kv(const ModelConfig& m) {
  KeyValueConfig c;
  c.set_int("channels", m.channels);
  c.set_int("freq_bins", m.freq_bins);
  c.set_int("cme_tcms", m.cme_tcms);
  c.set_int("csr_tcms", m.csr_tcms);
  c.set_int("tcm_per_group", m.tcm_per_group);
  c.set_int("dilation_cycle_M", m.dilation_cycle_M);
  c.set_bool("gate_weight_sharing", m.gate_weight_sharing);
  c.set_bool("smoothed", m.smoothed);
  c.set_int("init_seed", int64_t(m.init_seed));
  return c;
}

inline ModelConfig model_config_from_kv(const KeyValueConfig& c) {
  ModelConfig m;
  m.channels = c.get_int("channels", m.channels);
  m.freq_bins = c.get_int("freq_bins", m.freq_bins);
  m.cme_tcms = c.get_int("cme_tcms", m.cme_tcms);
  m.csr_tcms = c.get_int("csr_tcms", m.csr_tcms);
  m.tcm_per_group = c.get_int("tcm_per_group", m.tcm_per_group);
  m.dilation_cycle_M = c.get_int("dilation_cycle_M", m.dilation_cycle_M);
  m.gate_weight_sharing = c.get_bool("gate_weight_sharing", m.gate_weight_sharing);
  m.smoothed = c.get_bool("smoothed", m.smoothed);
  m.init_seed = uint64_t(c.get_int("init_seed", int64_t(m.init_seed)));
  return m;
}

// Structural fields that must agree for parameters to be interchangeable.
// init_seed is provenance, not structure.
inline std::vector<std::string> structural_mismatches(const ModelConfig& a,
                                                      const ModelConfig& b,
                                                      bool compare_csr) {
  std::vector<std::string> bad;
  auto chk = [&](const char* f, int64_t x, int64_t y) {
    if (x != y)
      bad.push_back(std::string(f) + " (" + std::to_string(x) + " vs " +
                    std::to_string(y) + ")");
  };
  chk("channels", a.channels, b.channels);
  chk("freq_bins", a.freq_bins, b.freq_bins);
  chk("cme_tcms", a.cme_tcms, b.cme_tcms);
  if (compare_csr) chk("csr_tcms", a.csr_tcms, b.csr_tcms);
  chk("tcm_per_group", a.tcm_per_group, b.tcm_per_group);
  chk("dilation_cycle_M", a.dilation_cycle_M, b.dilation_cycle_M);
  chk("gate_weight_sharing", a.gate_weight_sharing, b.gate_weight_sharing);
  chk("smoothed", a.smoothed, b.smoothed);
  return bad;
}

template <typename S>
void checkpoint_save(const std::string& path, const Model<S>& model,
                     const KeyValueConfig& provenance = {}) {
  RawCheckpoint ck;
  ck.kind = model.kind;
  ck.config_text = model_config_to_kv(model.cfg).serialize();
  ck.provenance_text = provenance.serialize();
  for (const auto& e : model.params.entries()) {
    RawCheckpoint::Param p;
    p.name = e.name;
    for (int64_t d : e.tensor.shape()) p.dims.push_back(uint32_t(d));
    p.values.resize(size_t(e.tensor.numel()));
    for (int64_t i = 0; i < e.tensor.numel(); ++i)
      p.values[size_t(i)] = float(e.tensor.data()[i]);
    ck.params.push_back(std::move(p));
  }
  raw_checkpoint_write(path, ck);
}

namespace ckptdetail {

template <typename S>
void copy_params(const RawCheckpoint& ck, Model<S>& model, bool subset,
                 const std::string& path) {
  size_t loaded = 0;
  for (const auto& p : ck.params) {
    const ParamEntry<S>* e = model.params.find(p.name);
    if (e == nullptr)
      throw ConfigError(path + ": checkpoint parameter '" + p.name +
                        "' does not exist in the target model");
    Shape shape;
    for (uint32_t d : p.dims) shape.push_back(int64_t(d));
    if (shape != e->tensor.shape())
      throw ConfigError(path + ": parameter '" + p.name + "' has shape " +
                        shape_str(shape) + " but the model expects " +
                        shape_str(e->tensor.shape()));
    for (size_t i = 0; i < p.values.size(); ++i)
      e->tensor.data()[int64_t(i)] = S(p.values[i]);
    ++loaded;
  }
  if (!subset && loaded != model.params.size())
    throw ConfigError(path + ": checkpoint holds " + std::to_string(loaded) +
                      " parameters but the model has " +
                      std::to_string(model.params.size()));
}

}  // namespace ckptdetail

// Rebuilds the model described by the checkpoint's own config echo.
template <typename S>
Model<S> checkpoint_load(const std::string& path) {
  RawCheckpoint ck = raw_checkpoint_read(path);
  ModelConfig cfg = model_config_from_kv(KeyValueConfig::parse(ck.config_text));
  Model<S> model = Model<S>::make(ck.kind, cfg);
  ckptdetail::copy_params(ck, model, /*subset=*/false, path);
  return model;
}

// Loads a checkpoint's parameters into an existing model. A "cme" checkpoint
// may initialize stage 1 of a "cts" model; the stage-2 parameters keep their
// fresh initialization. Structural config mismatches are fatal and listed.
template <typename S>
void checkpoint_load_into(const std::string& path, Model<S>& model) {
  RawCheckpoint ck = raw_checkpoint_read(path);
  require(ck.kind == model.kind || (ck.kind == "cme" && model.kind == "cts"),
          path + ": cannot load a '" + ck.kind + "' checkpoint into a '" +
              model.kind + "' model");
  ModelConfig cfg = model_config_from_kv(KeyValueConfig::parse(ck.config_text));
  auto bad = structural_mismatches(cfg, model.cfg, ck.kind == "cts");
  if (!bad.empty()) {
    std::string msg = path + ": structural config mismatch:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw ConfigError(msg);
  }
  ckptdetail::copy_params(ck, model, /*subset=*/ck.kind != model.kind, path);
}

// Header peek without materializing a model (analyze, error messages).
struct CheckpointInfo {
  std::string kind;
  KeyValueConfig config;
  KeyValueConfig provenance;
  int64_t param_count = 0;
};

inline CheckpointInfo checkpoint_peek(const std::string& path) {
  RawCheckpoint ck = raw_checkpoint_read(path);
  CheckpointInfo info;
  info.kind = ck.kind;
  info.config = KeyValueConfig::parse(ck.config_text);
  info.provenance = KeyValueConfig::parse(ck.provenance_text);
  for (const auto& p : ck.params) {
    int64_t n = 1;
    for (uint32_t d : p.dims) n *= d;
    info.param_count += n;
  }
  return info;
}

}  // namespace ctsnet
