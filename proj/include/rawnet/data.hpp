// SPDX-License-Identifier: Apache-2.0
//
// Protocol and score files, the synthetic desk-scale corpus, mini-batch
// ordering and the train/validation repartition.
#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rawnet/audio.hpp"
#include "rawnet/error.hpp"
#include "rawnet/sinc.hpp"

namespace rawnet {

enum class Key { bonafide, spoof };
enum class Split { train, dev, eval };

inline const char* to_string(Key k) { return k == Key::bonafide ? "bonafide" : "spoof"; }
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::eval: return "eval";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "eval") return Split::eval;
  throw ValueError("unknown split '" + std::string(s) + "' (expected train, dev or eval)");
}

struct ProtocolEntry {
  std::string utterance_id;
  std::string attack_id;  // "-" for bona fide
  Key key = Key::bonafide;
  std::optional<Split> split;

  bool operator==(const ProtocolEntry&) const = default;
};

struct ScoreRecord {
  std::string utterance_id;
  std::string attack_id;
  Key key = Key::bonafide;
  double score = 0.0;

  bool operator==(const ScoreRecord&) const = default;
};

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    auto fields = split_ws(text.substr(pos, nl - pos));
    if (!fields.empty()) f(line_no, fields);
    pos = nl + 1;
  }
}

inline Key parse_key(std::string_view tok, std::size_t line_no) {
  if (tok == "bonafide") return Key::bonafide;
  if (tok == "spoof") return Key::spoof;
  throw FormatError("line " + std::to_string(line_no) + ": unknown key '" + std::string(tok) +
                    "' (expected bonafide or spoof)");
}

inline void check_attack(std::string_view attack, Key key, std::size_t line_no) {
  if ((key == Key::bonafide) != (attack == "-"))
    throw FormatError("line " + std::to_string(line_no) + ": attack id '" + std::string(attack) +
                      "' inconsistent with key " + to_string(key) + " (bona fide uses '-')");
}

}  // namespace detail

/// Lines "utt_id attack_id key [split]"; blank lines are skipped.
inline std::vector<ProtocolEntry> parse_protocol(std::string_view text) {
  std::vector<ProtocolEntry> out;
  detail::for_each_line(text, [&](std::size_t n, const std::vector<std::string_view>& f) {
    if (f.size() != 3 && f.size() != 4)
      throw FormatError("line " + std::to_string(n) + ": expected 'utt_id attack_id key [split]', got " +
                        std::to_string(f.size()) + " fields");
    ProtocolEntry e{std::string(f[0]), std::string(f[1]), detail::parse_key(f[2], n), std::nullopt};
    detail::check_attack(f[1], e.key, n);
    if (f.size() == 4) {
      try {
        e.split = parse_split(f[3]);
      } catch (const ValueError& err) {
        throw FormatError("line " + std::to_string(n) + ": " + err.what());
      }
    }
    out.push_back(std::move(e));
  });
  return out;
}

inline std::string serialize_protocol(const std::vector<ProtocolEntry>& entries) {
  std::string out;
  for (const auto& e : entries) {
    out += e.utterance_id + ' ' + e.attack_id + ' ' + to_string(e.key);
    if (e.split) out += std::string(" ") + to_string(*e.split);
    out += '\n';
  }
  return out;
}

/// Lines "utt_id attack_id key score".
inline std::vector<ScoreRecord> parse_scores(std::string_view text) {
  std::vector<ScoreRecord> out;
  detail::for_each_line(text, [&](std::size_t n, const std::vector<std::string_view>& f) {
    if (f.size() != 4)
      throw FormatError("line " + std::to_string(n) + ": expected 'utt_id attack_id key score', got " +
                        std::to_string(f.size()) + " fields");
    ScoreRecord r{std::string(f[0]), std::string(f[1]), detail::parse_key(f[2], n), 0.0};
    detail::check_attack(f[1], r.key, n);
    auto [ptr, ec] = std::from_chars(f[3].data(), f[3].data() + f[3].size(), r.score);
    if (ec != std::errc() || ptr != f[3].data() + f[3].size() || !std::isfinite(r.score))
      throw FormatError("line " + std::to_string(n) + ": bad score '" + std::string(f[3]) + "'");
    out.push_back(std::move(r));
  });
  return out;
}

inline std::string serialize_scores(const std::vector<ScoreRecord>& records) {
  std::string out;
  for (const auto& r : records)
    out += r.utterance_id + ' ' + r.attack_id + ' ' + to_string(r.key) + ' ' + format_double(r.score) + '\n';
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace detail {

/// Sequential whitespace-separated tokens of a structured text model.
struct TokenReader {
  std::string_view text;
  std::size_t pos = 0;

  std::string_view next() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (start == pos) throw FormatError("unexpected end of model text");
    return text.substr(start, pos - start);
  }
  void expect(std::string_view tok) {
    auto t = next();
    if (t != tok) throw FormatError("expected '" + std::string(tok) + "', got '" + std::string(t) + "'");
  }
  double number() {
    auto t = next();
    double v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) throw FormatError("bad number '" + std::string(t) + "'");
    return v;
  }
  std::size_t count() {
    const double v = number();
    if (v < 0 || v != std::floor(v) || v > 1e9) throw FormatError("bad count");
    return static_cast<std::size_t>(v);
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Synthetic corpus

enum class ArtifactKind { click, phase_rotation, band_gap, hum };

inline const char* to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::click: return "click";
    case ArtifactKind::phase_rotation: return "phase_rotation";
    case ArtifactKind::band_gap: return "band_gap";
    case ArtifactKind::hum: return "hum";
  }
  return "?";
}

inline ArtifactKind parse_artifact(std::string_view s) {
  for (auto k : {ArtifactKind::click, ArtifactKind::phase_rotation, ArtifactKind::band_gap, ArtifactKind::hum})
    if (s == to_string(k)) return k;
  throw ValueError("unknown artifact '" + std::string(s) + "' (expected click, phase_rotation, band_gap or hum)");
}

struct AttackSpec {
  std::string id;
  ArtifactKind kind = ArtifactKind::click;
};

struct ClassCounts {
  std::size_t bonafide = 0;
  std::size_t spoof = 0;
};

struct SynthSpec {
  ClassCounts train{100, 100};
  ClassCounts dev{30, 30};
  ClassCounts eval{50, 50};
  std::vector<AttackSpec> attacks{{"A17", ArtifactKind::click}};
  std::uint64_t seed = 1;
  std::size_t min_samples = 3200;
  std::size_t max_samples = 4800;

  void validate() const {
    for (auto* c : {&train, &dev, &eval})
      if (c->bonafide == 0 || c->spoof == 0) throw ValueError("synth: every split needs at least one utterance per class");
    if (attacks.empty()) throw ValueError("synth: at least one attack is required");
    for (const auto& a : attacks)
      if (a.id.empty() || a.id == "-") throw ValueError("synth: invalid attack id '" + a.id + "'");
    if (min_samples == 0 || min_samples > max_samples) throw ValueError("synth: invalid utterance length range");
  }
};

struct Utterance {
  ProtocolEntry entry;
  std::vector<float> samples;
};

using Dataset = std::vector<Utterance>;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

/// Harmonic voiced tone with a slow pitch contour and syllable-rate
/// envelope, plus low-level pink noise. Energy stays below 4 kHz apart
/// from the noise floor.
inline std::vector<double> synth_voiced(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double sr = kSampleRate;
  const double two_pi = 2 * std::numbers::pi;
  const double f0 = 90 + 170 * u(rng);
  const double vib_rate = 1 + 2 * u(rng), vib_depth = 0.03 + 0.05 * u(rng), vib_phase = two_pi * u(rng);
  const double env_rate = 3 + 3 * u(rng), env_phase = two_pi * u(rng);
  std::vector<double> amp, phase;
  for (int k = 1; k * f0 * (1 + vib_depth) < 3800; ++k) {
    amp.push_back((0.5 + 0.5 * u(rng)) / k);
    phase.push_back(two_pi * u(rng));
  }

  std::vector<double> x(n);
  double theta = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f = f0 * (1 + vib_depth * std::sin(two_pi * vib_rate * t + vib_phase));
    theta += two_pi * f / sr;
    double v = 0;
    for (std::size_t k = 0; k < amp.size(); ++k) v += amp[k] * std::sin(static_cast<double>(k + 1) * theta + phase[k]);
    x[i] = v * (0.55 + 0.45 * std::sin(two_pi * env_rate * t + env_phase));
  }

  double peak = 0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  const double target = 0.3 + 0.3 * u(rng);
  for (auto& v : x) v *= target / peak;

  // Pink noise, Kellet's economy filter over white noise.
  std::normal_distribution<double> g(0.0, 1.0);
  double b0 = 0, b1 = 0, b2 = 0;
  const double level = 0.004;
  for (auto& v : x) {
    const double w = g(rng);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    v += level * (b0 + b1 + b2 + w * 0.1848);
  }
  return x;
}

/// Overlays a deterministic artifact in place. For clicks the returned
/// vector holds the sample index of every click onset.
inline std::vector<std::size_t> add_artifact(std::vector<double>& x, ArtifactKind kind, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::size_t> events;
  const double two_pi = 2 * std::numbers::pi;
  switch (kind) {
    case ArtifactKind::click: {
      const auto period = static_cast<std::size_t>(800 + 800 * u(rng));
      const double a = 0.25 + 0.25 * u(rng);
      for (auto i = static_cast<std::size_t>(period * u(rng)); i + 2 < x.size(); i += period) {
        x[i] += a;
        x[i + 1] -= a;
        x[i + 2] += 0.5 * a;
        events.push_back(i);
      }
      break;
    }
    case ArtifactKind::phase_rotation: {
      for (int stage = 0; stage < 4; ++stage) {
        const double c = 0.5 + 0.4 * u(rng);
        double x_prev = 0, y_prev = 0;
        for (auto& v : x) {
          const double y = c * v + x_prev - c * y_prev;
          x_prev = v;
          y_prev = y;
          v = y;
        }
      }
      break;
    }
    case ArtifactKind::band_gap: {
      const double lo = 1000 + 1000 * u(rng);
      const auto h = sinc_kernel(lo, lo + 600, 129, kSampleRate);
      const std::ptrdiff_t half = 64, n = static_cast<std::ptrdiff_t>(x.size());
      std::vector<double> band(x.size(), 0.0);
      for (std::ptrdiff_t i = 0; i < n; ++i)
        for (std::ptrdiff_t k = 0; k < 129; ++k) {
          const std::ptrdiff_t j = i + k - half;
          if (j >= 0 && j < n) band[static_cast<std::size_t>(i)] += h[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(j)];
        }
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= band[i];
      break;
    }
    case ArtifactKind::hum: {
      const double f = u(rng) < 0.5 ? 50.0 : 60.0, phase = two_pi * u(rng), a = 0.04 + 0.04 * u(rng);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double t = static_cast<double>(i) / kSampleRate;
        x[i] += a * (std::sin(two_pi * f * t + phase) + 0.5 * std::sin(2 * two_pi * f * t) +
                     0.25 * std::sin(3 * two_pi * f * t));
      }
      break;
    }
  }
  return events;
}

/// Rounds to the PCM16 grid so that the in-memory corpus equals what a
/// WAV round trip yields.
inline std::vector<float> to_pcm_grid(const std::vector<double>& x) {
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = dequantize_pcm16(quantize_pcm16(static_cast<float>(std::clamp(x[i], -1.0, 1.0))));
  return out;
}

/// Every utterance is drawn from its own generator seeded by (seed, split,
/// class, index), so the corpus is a pure function of the spec.
inline Dataset synth_corpus(const SynthSpec& spec) {
  spec.validate();
  Dataset out;
  const std::pair<Split, ClassCounts> splits[] = {{Split::train, spec.train}, {Split::dev, spec.dev}, {Split::eval, spec.eval}};
  const char* prefix[] = {"T", "D", "E"};
  for (const auto& [split, counts] : splits) {
    const auto s = static_cast<std::uint64_t>(split);
    std::size_t serial = 0;
    for (std::uint64_t cls = 0; cls < 2; ++cls) {
      const std::size_t n = cls == 0 ? counts.bonafide : counts.spoof;
      for (std::size_t i = 0; i < n; ++i) {
        std::mt19937_64 rng(mix_seed(mix_seed(spec.seed, s * 2 + cls), i));
        std::uniform_int_distribution<std::size_t> len(spec.min_samples, spec.max_samples);
        auto x = synth_voiced(len(rng), rng);
        ProtocolEntry e;
        char id[32];
        std::snprintf(id, sizeof id, "SYN_%s_%05zu", prefix[s], ++serial);
        e.utterance_id = id;
        e.split = split;
        if (cls == 0) {
          e.attack_id = "-";
          e.key = Key::bonafide;
        } else {
          const auto& attack = spec.attacks[i % spec.attacks.size()];
          e.attack_id = attack.id;
          e.key = Key::spoof;
          add_artifact(x, attack.kind, rng);
        }
        out.push_back(Utterance{std::move(e), to_pcm_grid(x)});
      }
    }
  }
  return out;
}

/// Writes `dir/wav/<utt>.wav`, `dir/protocol.txt` and `dir/manifest.tsv`.
inline void write_corpus(const std::filesystem::path& dir, const Dataset& data) {
  std::filesystem::create_directories(dir / "wav");
  std::vector<ProtocolEntry> protocol;
  std::string manifest = "utterance_id\tsplit\tkey\tattack_id\tpath\tn_samples\n";
  for (const auto& u : data) {
    const auto rel = std::filesystem::path("wav") / (u.entry.utterance_id + ".wav");
    save_wav(dir / rel, Waveform{u.samples, kSampleRate});
    protocol.push_back(u.entry);
    manifest += u.entry.utterance_id + '\t' + (u.entry.split ? to_string(*u.entry.split) : "-") + '\t' +
                to_string(u.entry.key) + '\t' + u.entry.attack_id + '\t' + rel.generic_string() + '\t' +
                std::to_string(u.samples.size()) + '\n';
  }
  write_text_file(dir / "protocol.txt", serialize_protocol(protocol));
  write_text_file(dir / "manifest.tsv", manifest);
}

/// Reads `dir/protocol.txt` and the matching files under `dir/wav`.
inline Dataset load_corpus(const std::filesystem::path& dir) {
  Dataset out;
  for (auto& e : parse_protocol(read_text_file(dir / "protocol.txt"))) {
    auto w = load_wav(dir / "wav" / (e.utterance_id + ".wav"));
    out.push_back(Utterance{std::move(e), std::move(w.samples)});
  }
  return out;
}

inline Dataset select_split(const Dataset& data, Split split) {
  Dataset out;
  for (const auto& u : data)
    if (u.entry.split == split) out.push_back(u);
  return out;
}

// ---------------------------------------------------------------------------
// Mini-batches and repartition

/// Index batches over [0, n) in a shuffled order that depends only on
/// (seed, epoch). The final batch may be short.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                          std::uint64_t epoch) {
  if (n == 0) throw ValueError("batch_iter: empty dataset");
  if (batch_size == 0) throw ValueError("batch_iter: batch size must be positive");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(mix_seed(seed, epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

struct Repartition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Training keeps every train-split item and absorbs the development split
/// except a class-stratified `val_fraction` held out for validation. When
/// the data carries no dev split, validation is drawn from train instead.
inline Repartition repartition(const std::vector<ProtocolEntry>& entries, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0 && val_fraction < 1)) throw ValueError("validation fraction must lie in (0, 1)");
  bool has_dev = false;
  for (const auto& e : entries) has_dev |= e.split == Split::dev;
  const Split pool_split = has_dev ? Split::dev : Split::train;

  std::vector<std::size_t> pool[2];
  std::vector<bool> is_val(entries.size(), false);
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split.value_or(Split::train) == pool_split) pool[static_cast<int>(entries[i].key)].push_back(i);
  std::mt19937_64 rng(mix_seed(seed, 0x7661));
  for (auto& p : pool) {
    std::shuffle(p.begin(), p.end(), rng);
    auto k = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(p.size())));
    if (p.size() >= 2) k = std::clamp<std::size_t>(k, 1, p.size() - 1);
    for (std::size_t j = 0; j < k && j < p.size(); ++j) is_val[p[j]] = true;
  }

  Repartition r;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Split s = entries[i].split.value_or(Split::train);
    if (is_val[i])
      r.validation.push_back(i);
    else if (s == Split::train || s == Split::dev)
      r.train.push_back(i);
  }
  return r;
}

}  // namespace rawnet
