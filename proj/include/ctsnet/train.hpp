#pragma once

// Two-phase optimization. Stage 1 trains CmeNet alone on the magnitude loss
// until convergence (patience on the epoch loss). Stage 2 builds the full
// pipeline, initializes stage 1 from the pretrained parameters, and trains
// jointly with per-stage learning rates. Batches are assembled at utterance
// level; long utterances are chunked with a fresh random start each epoch.

#include <cstdio>
#include <string>
#include <vector>

#include "ctsnet/checkpoint.hpp"
#include "ctsnet/config.hpp"
#include "ctsnet/data.hpp"
#include "ctsnet/losses.hpp"
#include "ctsnet/networks.hpp"
#include "ctsnet/optim.hpp"

namespace ctsnet {

struct TrainConfig {
  double lr_stage1 = 1e-3;
  double lr_finetune_cme = 1e-4;
  double lr_csr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda = 0.1;
  int64_t batch_size = 2;
  double max_chunk_seconds = 8.0;
  uint64_t seed = 7;
  int64_t max_epochs_stage1 = 200;
  int64_t max_epochs_stage2 = 200;
  int64_t patience = 5;
  double clip_norm = 5.0;
  std::string checkpoint_out = "model.bin";
  CorpusConfig corpus;
  ModelConfig model;

  void validate() const {
    if (lr_stage1 < 0 || lr_finetune_cme < 0 || lr_csr < 0)
      throw ConfigError("learning rates must be nonnegative");
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw ConfigError("lambda must lie in [0,1]");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_chunk_seconds <= 0) throw ConfigError("max_chunk_seconds must be > 0");
    if (corpus.snr_max_db < corpus.snr_min_db || corpus.snr_step_db <= 0)
      throw ConfigError("SNR range is empty");
  }
};

inline TrainConfig train_config_from_kv(const KeyValueConfig& c) {
  TrainConfig t;
  t.lr_stage1 = c.get_double("lr_stage1", t.lr_stage1);
  t.lr_finetune_cme = c.get_double("lr_finetune_cme", t.lr_finetune_cme);
  t.lr_csr = c.get_double("lr_csr", t.lr_csr);
  t.beta1 = c.get_double("beta1", t.beta1);
  t.beta2 = c.get_double("beta2", t.beta2);
  t.lambda = c.get_double("lambda", t.lambda);
  t.batch_size = c.get_int("batch_size", t.batch_size);
  t.max_chunk_seconds = c.get_double("max_chunk_seconds", t.max_chunk_seconds);
  t.seed = uint64_t(c.get_int("seed", int64_t(t.seed)));
  t.max_epochs_stage1 = c.get_int("max_epochs_stage1", t.max_epochs_stage1);
  t.max_epochs_stage2 = c.get_int("max_epochs_stage2", t.max_epochs_stage2);
  t.patience = c.get_int("patience", t.patience);
  t.clip_norm = c.get_double("clip_norm", t.clip_norm);
  t.checkpoint_out = c.get_string("checkpoint_out", t.checkpoint_out);
  t.corpus.seed = uint64_t(c.get_int("corpus_seed", int64_t(t.seed)));
  t.corpus.pairs = c.get_int("corpus_pairs", t.corpus.pairs);
  t.corpus.utterance_seconds =
      c.get_double("utterance_seconds", t.corpus.utterance_seconds);
  t.corpus.snr_min_db = c.get_double("snr_min_db", t.corpus.snr_min_db);
  t.corpus.snr_max_db = c.get_double("snr_max_db", t.corpus.snr_max_db);
  t.corpus.snr_step_db = c.get_double("snr_step_db", t.corpus.snr_step_db);
  t.model.channels = c.get_int("channels", t.model.channels);
  t.model.freq_bins = c.get_int("freq_bins", t.model.freq_bins);
  t.model.cme_tcms = c.get_int("cme_tcms", t.model.cme_tcms);
  t.model.csr_tcms = c.get_int("csr_tcms", t.model.csr_tcms);
  t.model.tcm_per_group = c.get_int("tcm_per_group", t.model.tcm_per_group);
  t.model.dilation_cycle_M =
      c.get_int("dilation_cycle_M", t.model.dilation_cycle_M);
  t.model.gate_weight_sharing =
      c.get_bool("gate_weight_sharing", t.model.gate_weight_sharing);
  t.model.smoothed = c.get_bool("smoothed", t.model.smoothed);
  t.model.init_seed = uint64_t(c.get_int("init_seed", int64_t(t.seed)));
  t.validate();
  return t;
}

template <typename S>
struct TrainLog {
  std::vector<std::string> lines;  // one per step
  std::vector<S> epoch_losses;     // average step total per epoch
  S initial_loss = S(0);           // corpus loss before any update
  S final_loss = S(0);
  int64_t steps = 0;
  bool aborted = false;
  std::string abort_reason;
};

template <typename S>
struct TrainOutcome {
  Model<S> model;
  TrainLog<S> log;
};

namespace traindetail {

// Spectra of one (possibly chunked) utterance as network-ready planes.
template <typename S>
struct UttFeatures {
  Tensor<S> noisy_mag, noisy_r, noisy_i;
  Tensor<S> clean_mag, clean_r, clean_i;
};

template <typename S>
UttFeatures<S> make_features(const Waveform& mixture, const Waveform& clean) {
  UttFeatures<S> f;
  auto nspec = stft<S>(mixture);
  auto cspec = stft<S>(clean);
  f.noisy_mag = as_batch_plane(to_mag_phase(nspec).mag);
  f.noisy_r = as_batch_plane(nspec.real);
  f.noisy_i = as_batch_plane(nspec.imag);
  f.clean_mag = as_batch_plane(to_mag_phase(cspec).mag);
  f.clean_r = as_batch_plane(cspec.real);
  f.clean_i = as_batch_plane(cspec.imag);
  return f;
}

inline Waveform cut(const Waveform& w, int64_t start, int64_t len) {
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(w.samples.begin() + start, w.samples.begin() + start + len);
  return out;
}

template <typename S>
std::string step_line(int64_t step, S l_cm, S l_ri, S l_mag, S total) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "step=%lld l_cm=%.17g l_ri=%.17g l_mag=%.17g total=%.17g",
                static_cast<long long>(step), double(l_cm), double(l_ri),
                double(l_mag), double(total));
  return buf;
}

template <typename S>
std::vector<std::vector<S>> snapshot(const ParamRegistry<S>& reg) {
  std::vector<std::vector<S>> snap;
  for (const auto& e : reg.entries()) snap.push_back(e.tensor.values());
  return snap;
}

template <typename S>
void restore(const ParamRegistry<S>& reg, const std::vector<std::vector<S>>& snap) {
  for (size_t i = 0; i < snap.size(); ++i) {
    auto& t = reg.entries()[i].tensor;
    std::copy(snap[i].begin(), snap[i].end(), t.data());
  }
}

// One utterance's losses for either stage. Stage 1 uses only l_cm.
template <typename S>
struct UttLoss {
  Tensor<S> total, l_cm, l_ri, l_mag;
};

template <typename S>
UttLoss<S> utterance_loss(const Model<S>& model, const UttFeatures<S>& f,
                          S lambda, bool stage2) {
  UttLoss<S> out;
  if (!stage2) {
    Tensor<S> est = model.cme->forward(f.noisy_mag);
    out.l_cm = loss_cm(est, f.clean_mag);
    out.total = out.l_cm;
    return out;
  }
  CtsOutput<S> y = model.forward(f.noisy_mag, f.noisy_r, f.noisy_i);
  Tensor<S> cm = loss_cm(y.coarse_mag, f.clean_mag);
  Stage2Loss<S> s2 = loss_stage2(y.refined_r, y.refined_i, f.clean_r,
                                 f.clean_i, lambda, cm);
  out.total = s2.total;
  out.l_cm = cm;
  out.l_ri = s2.l_ri;
  out.l_mag = s2.l_mag;
  return out;
}

// Core loop shared by both stages. Pretrained parameters must already be in
// the model. Aborts to the last end-of-epoch parameters on divergence.
template <typename S>
TrainOutcome<S> run_training(Model<S> model, const TrainConfig& cfg,
                             const Dataset& ds, bool stage2,
                             std::vector<std::string>* step_sink) {
  cfg.validate();
  require(!ds.pairs.empty(), "training needs a nonempty dataset");
  const S lambda = S(cfg.lambda);
  const int64_t max_epochs = stage2 ? cfg.max_epochs_stage2 : cfg.max_epochs_stage1;
  const int64_t chunk_samples = int64_t(cfg.max_chunk_seconds * kSampleRate);

  Adam<S> opt(
      model.params,
      [&](const std::string& name) {
        if (!stage2) return cfg.lr_stage1;
        return name.rfind("cme.", 0) == 0 ? cfg.lr_finetune_cme : cfg.lr_csr;
      },
      cfg.beta1, cfg.beta2);

  TrainOutcome<S> out;
  TrainLog<S>& log = out.log;
  Rng base(cfg.seed);

  // Loss of the untouched model over the full corpus.
  {
    NoGradGuard<S> ng;
    S acc = S(0);
    for (const auto& p : ds.pairs) {
      auto f = make_features<S>(p.mixture, p.clean);
      acc += utterance_loss(model, f, lambda, stage2).total.item();
    }
    log.initial_loss = acc / S(ds.pairs.size());
  }

  auto good = snapshot(model.params);
  S best = log.initial_loss;
  int64_t stale = 0;
  int64_t step = 0;

  for (int64_t epoch = 0; epoch < max_epochs; ++epoch) {
    Rng erng = base.fork(uint64_t(epoch) + 1);
    std::vector<size_t> order(ds.pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    erng.shuffle(order);

    S epoch_acc = S(0);
    int64_t epoch_steps = 0;
    try {
      for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
        const size_t n =
            std::min(size_t(cfg.batch_size), order.size() - at);
        Tape<S> tape;
        Tensor<S> total_sum;
        S ri_v = S(0), mag_v = S(0), cm_v = S(0);
        for (size_t k = 0; k < n; ++k) {
          const MixturePair& pair = ds.pairs[order[at + k]];
          Waveform mix = pair.mixture, cln = pair.clean;
          if (mix.size() > chunk_samples) {
            const int64_t start =
                int64_t(erng.below(uint64_t(mix.size() - chunk_samples + 1)));
            mix = cut(mix, start, chunk_samples);
            cln = cut(cln, start, chunk_samples);
          }
          auto f = make_features<S>(mix, cln);
          UttLoss<S> ul = utterance_loss(model, f, lambda, stage2);
          total_sum = total_sum.defined() ? add(total_sum, ul.total) : ul.total;
          cm_v += ul.l_cm.item();
          if (stage2) {
            ri_v += ul.l_ri.item();
            mag_v += ul.l_mag.item();
          }
        }
        Tensor<S> batch_total = scale(total_sum, S(1) / S(n));
        const S total_v = batch_total.item();
        if (!std::isfinite(double(total_v)))
          throw NumericError("training loss diverged (non-finite total) at step " +
                             std::to_string(step + 1));
        opt.zero_grad();
        tape.backward(batch_total);
        clip_grad_norm(model.params, cfg.clip_norm);
        opt.step();
        ++step;
        ++epoch_steps;
        epoch_acc += total_v;
        const std::string line = step_line(step, cm_v / S(n), ri_v / S(n),
                                           mag_v / S(n), total_v);
        log.lines.push_back(line);
        if (step_sink) step_sink->push_back(line);
      }
    } catch (const NumericError& err) {
      restore(model.params, good);
      log.aborted = true;
      log.abort_reason = err.what();
      break;
    }

    const S epoch_loss = epoch_acc / S(epoch_steps);
    log.epoch_losses.push_back(epoch_loss);
    good = snapshot(model.params);
    if (epoch_loss < best) {
      best = epoch_loss;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;  // converged: no improvement for `patience` epochs
    }
  }

  log.steps = step;
  log.final_loss = log.epoch_losses.empty() ? log.initial_loss
                                            : log.epoch_losses.back();
  out.model = std::move(model);
  return out;
}

}  // namespace traindetail

template <typename S>
TrainOutcome<S> pretrain_cme(const TrainConfig& cfg, const Dataset& ds,
                             std::vector<std::string>* step_sink = nullptr) {
  Model<S> model = Model<S>::make("cme", cfg.model);
  return traindetail::run_training(std::move(model), cfg, ds, /*stage2=*/false,
                                   step_sink);
}

// Copies every parameter whose name exists in both registries.
template <typename S>
int64_t copy_matching_params(const ParamRegistry<S>& src,
                             const ParamRegistry<S>& dst) {
  int64_t copied = 0;
  for (const auto& e : src.entries()) {
    const ParamEntry<S>* d = dst.find(e.name);
    if (d == nullptr) continue;
    require(d->tensor.shape() == e.tensor.shape(),
            "parameter '" + e.name + "' shape mismatch between stages");
    std::copy(e.tensor.data(), e.tensor.data() + e.tensor.numel(),
              d->tensor.data());
    ++copied;
  }
  return copied;
}

template <typename S>
TrainOutcome<S> joint_train(const TrainConfig& cfg, const Dataset& ds,
                            const Model<S>& cme_init,
                            std::vector<std::string>* step_sink = nullptr) {
  require(cme_init.kind == "cme" || cme_init.kind == "cts",
          "joint_train needs a cme or cts initializer");
  auto bad = structural_mismatches(cme_init.cfg, cfg.model,
                                   cme_init.kind == "cts");
  if (!bad.empty()) {
    std::string msg = "joint_train: incompatible stage-1 checkpoint:";
    for (const auto& b : bad) msg += " " + b + ";";
    throw ConfigError(msg);
  }
  Model<S> model = Model<S>::make("cts", cfg.model);
  const int64_t copied = copy_matching_params(cme_init.params, model.params);
  require(copied > 0, "joint_train: initializer shares no parameters");
  return traindetail::run_training(std::move(model), cfg, ds, /*stage2=*/true,
                                   step_sink);
}

}  // namespace ctsnet
