// SPDX-License-Identifier: Apache-2.0
//
// Training loop, evaluation pass and checkpoint files.
//
// Checkpoint layout (all integers little-endian, floats IEEE-754 binary32,
// doubles binary64):
//   "RNCKPT" u16 version
//   u64 config hash, string config text
//   u64 epochs_done, u64 best_epoch, f64 best_val_loss
//   u64 log entries, each: u64 epoch, f64 train_loss, f64 val_loss,
//       f64 val_eer, f64 seconds
//   params block (current), u64 adam step, moments per parameter,
//   params block (best)
//   u64 FNV-1a checksum of every preceding byte
// A params block is u64 count, then per tensor: string name, u64 numel,
// numel floats; trainable parameters first, then batch-norm buffers.
// Strings are u64 length followed by bytes.
#pragma once

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rawnet/adam.hpp"
#include "rawnet/audio.hpp"
#include "rawnet/data.hpp"
#include "rawnet/error.hpp"
#include "rawnet/metrics.hpp"
#include "rawnet/model.hpp"

namespace rawnet {

enum class Preset { paper, desk };

inline const char* to_string(Preset p) { return p == Preset::paper ? "paper" : "desk"; }

inline Preset parse_preset(std::string_view s) {
  if (s == "paper") return Preset::paper;
  if (s == "desk") return Preset::desk;
  throw ValueError("unknown model preset '" + std::string(s) + "' (expected paper or desk)");
}

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  Preset preset = Preset::desk;
  ScaleKind scale = ScaleKind::mel;
  double val_fraction = 0.1;
  bool random_crop = false;

  ModelConfig model() const {
    ModelConfig m = preset == Preset::paper ? ModelConfig::paper() : ModelConfig::desk();
    m.filterbank.scale = scale;
    return m;
  }

  void validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ValueError("learning rate must be positive");
    if (epochs == 0) throw ValueError("epochs must be positive");
    if (batch_size == 0) throw ValueError("batch size must be positive");
    if (!(val_fraction > 0 && val_fraction < 1)) throw ValueError("validation fraction must lie in (0, 1)");
  }

  /// Everything that shapes the optimization trajectory except the epoch
  /// budget, so a run can be resumed with a larger budget.
  std::string canonical() const {
    std::ostringstream os;
    os << model().canonical() << ";lr=" << format_double(learning_rate) << ";batch=" << batch_size
       << ";seed=" << seed << ";preset=" << to_string(preset) << ";val_fraction=" << format_double(val_fraction)
       << ";random_crop=" << random_crop;
    return os.str();
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical()) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_eer = 0;
  double seconds = 0;

  /// Equality ignores wall time.
  bool same_outcome(const EpochRecord& o) const {
    return epoch == o.epoch && train_loss == o.train_loss && val_loss == o.val_loss &&
           (val_eer == o.val_eer || (std::isnan(val_eer) && std::isnan(o.val_eer)));
  }
};

using TrainLog = std::vector<EpochRecord>;

inline std::string format_train_log(const TrainLog& log) {
  std::string out = "epoch\ttrain_loss\tval_loss\tval_eer\tseconds\n";
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + "\t" + format_double(r.train_loss) + "\t" + format_double(r.val_loss) + "\t" +
           (std::isnan(r.val_eer) ? std::string("nan") : format_double(r.val_eer)) + "\t" +
           format_double(std::round(r.seconds * 1000) / 1000) + "\n";
  }
  return out;
}

/// Complete training state: enough to resume or to score.
struct Checkpoint {
  TrainConfig config;
  ModelParams<float> params;
  AdamState<float> adam;
  std::size_t epochs_done = 0;
  ModelParams<float> best;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
  TrainLog log;
};

namespace detail {

/// Copies `samples` to exactly n samples starting at `offset` (tiling short
/// inputs as fix_length does).
inline std::vector<float> crop_at(const std::vector<float>& samples, std::size_t n, std::size_t offset) {
  if (samples.size() <= n || offset == 0) return fix_length(samples, n);
  return {samples.begin() + static_cast<std::ptrdiff_t>(offset),
          samples.begin() + static_cast<std::ptrdiff_t>(offset + n)};
}

inline Tensor<float> stack_batch(const Dataset& data, std::span<const std::size_t> idx, std::size_t n,
                                 const std::vector<std::size_t>* offsets = nullptr) {
  std::vector<float> buf;
  buf.reserve(idx.size() * n);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto w = crop_at(data[idx[k]].samples, n, offsets ? (*offsets)[k] : 0);
    buf.insert(buf.end(), w.begin(), w.end());
  }
  return Tensor<float>({idx.size(), 1, n}, std::move(buf));
}

inline std::vector<int> labels_of(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<int> out;
  for (std::size_t i : idx) out.push_back(data[i].entry.key == Key::bonafide ? kBonafideClass : kSpoofClass);
  return out;
}

struct EvalPass {
  double mean_loss = 0;
  std::vector<double> scores;
};

/// Eval-mode pass over `idx` in fixed-size chunks.
inline EvalPass eval_pass(const ModelParams<float>& p, const Dataset& data, const std::vector<std::size_t>& idx,
                          std::size_t chunk = 32) {
  NoGradGuard ng;
  EvalPass r;
  double loss_sum = 0;
  for (std::size_t s = 0; s < idx.size(); s += chunk) {
    std::span<const std::size_t> part(idx.data() + s, std::min(chunk, idx.size() - s));
    auto logits = model_forward(stack_batch(data, part, p.config.n_samples), p);
    const auto labels = labels_of(data, part);
    loss_sum += static_cast<double>(softmax_cross_entropy(logits, std::span<const int>(labels)).item()) *
                static_cast<double>(part.size());
    const auto v = logits.values();
    for (std::size_t b = 0; b < part.size(); ++b)
      r.scores.push_back(score_from_logits<float>(std::span<const float>(v.data() + 2 * b, 2)));
  }
  r.mean_loss = idx.empty() ? 0.0 : loss_sum / static_cast<double>(idx.size());
  return r;
}

}  // namespace detail

/// Fresh training state for `cfg`.
inline Checkpoint init_training(const TrainConfig& cfg) {
  cfg.validate();
  Checkpoint ck;
  ck.config = cfg;
  ck.params = model_init<float>(mix_seed(cfg.seed, 0x1417), cfg.model());
  ck.adam = AdamState<float>(ck.params.parameters(), AdamConfig{.learning_rate = cfg.learning_rate});
  ck.best = ck.params.clone();
  return ck;
}

/// Called after every completed epoch with the updated state.
using EpochCallback = std::function<void(const Checkpoint&)>;

/// Trains until `state.config.epochs` epochs are complete, continuing from
/// `state.epochs_done`. The dataset is repartitioned by protocol split into
/// training and validation subsets; `state.best` tracks the parameters with
/// the lowest validation loss.
inline void train(Checkpoint& state, const Dataset& data, const EpochCallback& on_epoch = {}) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  std::vector<ProtocolEntry> entries;
  std::size_t n_bona = 0;
  for (const auto& u : data) {
    entries.push_back(u.entry);
    n_bona += u.entry.key == Key::bonafide;
  }
  if (n_bona == 0 || n_bona == data.size()) throw ValueError("train: dataset must contain both classes");
  const auto parts = repartition(entries, cfg.val_fraction, mix_seed(cfg.seed, 0x5917));
  if (parts.train.empty() || parts.validation.empty()) throw ValueError("train: empty training or validation subset");
  const std::size_t n = state.params.config.n_samples;

  auto params = state.params.parameters();
  for (std::size_t epoch = state.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches = make_batches(parts.train.size(), cfg.batch_size, cfg.seed, epoch);
    std::mt19937_64 crop_rng(mix_seed(mix_seed(cfg.seed, 0xC409), epoch));
    double loss_sum = 0;
    for (const auto& b : batches) {
      std::vector<std::size_t> idx, offsets;
      for (std::size_t k : b) {
        idx.push_back(parts.train[k]);
        const std::size_t len = data[parts.train[k]].samples.size();
        offsets.push_back(cfg.random_crop && len > n
                              ? std::uniform_int_distribution<std::size_t>(0, len - n)(crop_rng)
                              : 0);
      }
      const auto labels = detail::labels_of(data, idx);
      state.params.zero_grad();
      auto logits = model_forward(detail::stack_batch(data, idx, n, &offsets), state.params, Mode::train);
      auto loss = softmax_cross_entropy(logits, std::span<const int>(labels));
      backward(loss);
      adam_step<float>(params, state.adam);
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
    }

    const auto val = detail::eval_pass(state.params, data, parts.validation);
    std::vector<double> bona, spoof;
    for (std::size_t i = 0; i < parts.validation.size(); ++i)
      (data[parts.validation[i]].entry.key == Key::bonafide ? bona : spoof).push_back(val.scores[i]);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(parts.train.size());
    rec.val_loss = val.mean_loss;
    rec.val_eer = bona.empty() || spoof.empty() ? std::nan("") : compute_eer(bona, spoof).eer;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    state.log.push_back(rec);
    state.epochs_done = epoch + 1;
    if (val.mean_loss < state.best_val_loss) {
      state.best_val_loss = val.mean_loss;
      state.best_epoch = epoch + 1;
      state.best = state.params.clone();
    }
    if (on_epoch) on_epoch(state);
  }
}

struct TrainResult {
  ModelParams<float> params;  // best validation loss
  TrainLog log;
};

inline TrainResult train(const Dataset& data, const TrainConfig& cfg) {
  auto state = init_training(cfg);
  train(state, data);
  return {std::move(state.best), std::move(state.log)};
}

/// One score per utterance (higher means bona fide), in input order.
inline std::vector<ScoreRecord> evaluate(const ModelParams<float>& p, const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto pass = detail::eval_pass(p, data, idx);
  std::vector<ScoreRecord> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    out.push_back({data[i].entry.utterance_id, data[i].entry.attack_id, data[i].entry.key, pass.scores[i]});
  return out;
}

// Checkpoint serialization.

namespace detail {

inline constexpr char kCheckpointMagic[] = "RNCKPT";
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(const unsigned char* p, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

class ByteWriter {
 public:
  std::vector<unsigned char> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> v) {
    for (float x : v) {
      const auto u = std::bit_cast<std::uint32_t>(x);
      for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>(u >> (8 * i)));
    }
  }
  void str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}

  const unsigned char* take(std::size_t k) {
    if (k > n_ - pos_) throw FormatError("checkpoint: truncated");
    const auto* out = p_ + pos_;
    pos_ += k;
    return out;
  }
  std::uint16_t u16() {
    const auto* b = take(2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint64_t u64() {
    const auto* b = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f32s(std::span<float> out) {
    const auto* b = take(out.size() * 4);
    for (std::size_t j = 0; j < out.size(); ++j) {
      std::uint32_t u = 0;
      for (int i = 3; i >= 0; --i) u = (u << 8) | b[4 * j + static_cast<std::size_t>(i)];
      out[j] = std::bit_cast<float>(u);
    }
  }
  std::string str() {
    const auto len = u64();
    const auto* b = take(len);
    return std::string(reinterpret_cast<const char*>(b), len);
  }
  bool done() const { return pos_ == n_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline void write_params(ByteWriter& w, const ModelParams<float>& p) {
  const auto named = p.named_parameters();
  const auto buffers = p.named_buffers();
  w.u64(named.size() + buffers.size());
  for (const auto& [name, t] : named) {
    w.str(name);
    w.u64(t.numel());
    w.f32s(t.values());
  }
  for (const auto& [name, v] : buffers) {
    w.str(name);
    w.u64(v->size());
    w.f32s(*v);
  }
}

/// Fills an initialized `p` of the right architecture from `r`.
inline void read_params(ByteReader& r, ModelParams<float>& p) {
  auto named = p.named_parameters();
  auto buffers = p.mutable_buffers();
  if (r.u64() != named.size() + buffers.size()) throw FormatError("checkpoint: parameter count mismatch");
  auto read_one = [&](const std::string& name, std::span<float> dst) {
    const auto got = r.str();
    if (got != name) throw FormatError("checkpoint: expected tensor '" + name + "', found '" + got + "'");
    if (r.u64() != dst.size()) throw FormatError("checkpoint: size mismatch for '" + name + "'");
    r.f32s(dst);
  };
  for (auto& [name, t] : named) read_one(name, t.data());
  for (auto& [name, v] : buffers) read_one(name, *v);
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw(detail::kCheckpointMagic, 6);
  w.u16(detail::kCheckpointVersion);
  w.u64(ck.config.hash());
  w.str(ck.config.canonical());
  w.u64(ck.config.epochs);
  w.u64(ck.epochs_done);
  w.u64(ck.best_epoch);
  w.f64(ck.best_val_loss);
  w.u64(ck.log.size());
  for (const auto& e : ck.log) {
    w.u64(e.epoch);
    w.f64(e.train_loss);
    w.f64(e.val_loss);
    w.f64(e.val_eer);
    w.f64(e.seconds);
  }
  detail::write_params(w, ck.params);
  w.u64(ck.adam.step);
  for (std::size_t i = 0; i < ck.adam.first_moment.size(); ++i) {
    w.f32s(ck.adam.first_moment[i]);
    w.f32s(ck.adam.second_moment[i]);
  }
  detail::write_params(w, ck.best);
  w.u64(detail::fnv1a(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

/// Parses a checkpoint written for `config`. The stored config hash must
/// equal `config.hash()`; the epoch budget is taken from `config`.
inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const TrainConfig& config) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 6) != 0)
    throw FormatError("checkpoint: bad magic");
  const std::size_t body = bytes.size() - 8;
  detail::ByteReader tail(bytes.data() + body, 8);
  if (tail.u64() != detail::fnv1a(bytes.data(), body)) throw FormatError("checkpoint: checksum mismatch (corrupt file)");
  detail::ByteReader r(bytes.data(), body);
  r.take(6);
  if (const auto v = r.u16(); v != detail::kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(v));
  const std::uint64_t hash = r.u64();
  const std::string text = r.str();
  if (hash != config.hash() || text != config.canonical())
    throw ValueError("checkpoint: config hash mismatch (file: " + text + ")");
  r.u64();  // epoch budget of the run that wrote the file
  Checkpoint ck = init_training(config);
  ck.epochs_done = r.u64();
  ck.best_epoch = r.u64();
  ck.best_val_loss = r.f64();
  const auto n_log = r.u64();
  if (n_log != ck.epochs_done) throw FormatError("checkpoint: log length differs from completed epochs");
  for (std::uint64_t i = 0; i < n_log; ++i) {
    EpochRecord e;
    e.epoch = r.u64();
    e.train_loss = r.f64();
    e.val_loss = r.f64();
    e.val_eer = r.f64();
    e.seconds = r.f64();
    ck.log.push_back(e);
  }
  detail::read_params(r, ck.params);
  ck.adam.step = r.u64();
  for (std::size_t i = 0; i < ck.adam.first_moment.size(); ++i) {
    r.f32s(ck.adam.first_moment[i]);
    r.f32s(ck.adam.second_moment[i]);
  }
  detail::read_params(r, ck.best);
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

/// Reads only the header to recover the stored config text and epoch budget.
inline std::pair<std::string, std::size_t> peek_checkpoint_config(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), detail::kCheckpointMagic, 6) != 0)
    throw FormatError("checkpoint: bad magic");
  detail::ByteReader r(bytes.data(), bytes.size() - 8);
  r.take(6);
  r.u16();
  r.u64();
  auto text = r.str();
  const auto epochs = r.u64();
  return {std::move(text), epochs};
}

/// Rebuilds the TrainConfig stored in a checkpoint header.
inline TrainConfig parse_train_config(std::string_view canonical, std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  for (std::size_t pos = 0; pos < canonical.size();) {
    auto end = canonical.find(';', pos);
    if (end == std::string_view::npos) end = canonical.size();
    const auto field = canonical.substr(pos, end - pos);
    pos = end + 1;
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) continue;
    const auto key = field.substr(0, eq);
    const std::string value(field.substr(eq + 1));
    try {
      if (key == "lr") cfg.learning_rate = std::stod(value);
      else if (key == "batch") cfg.batch_size = std::stoull(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "preset") cfg.preset = parse_preset(value);
      else if (key == "val_fraction") cfg.val_fraction = std::stod(value);
      else if (key == "random_crop") cfg.random_crop = value == "1";
      else if (key == "scale") cfg.scale = parse_scale(value);
    } catch (const std::logic_error&) {
      throw FormatError("checkpoint: malformed config field '" + std::string(field) + "'");
    }
  }
  if (cfg.canonical() != canonical)
    throw FormatError("checkpoint: config text does not describe a known preset");
  return cfg;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  auto tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, encode_checkpoint(ck));
  std::filesystem::rename(tmp, path);
}

/// Loads a checkpoint, verifying it against `expected` when given and
/// otherwise against the config recorded in its own header.
inline Checkpoint load_checkpoint(const std::filesystem::path& path,
                                  const std::optional<TrainConfig>& expected = std::nullopt) {
  const auto bytes = read_file_bytes(path);
  if (expected) return decode_checkpoint(bytes, *expected);
  const auto [text, epochs] = peek_checkpoint_config(bytes);
  return decode_checkpoint(bytes, parse_train_config(text, epochs));
}

}  // namespace rawnet
