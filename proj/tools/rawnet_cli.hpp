// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Exit codes: 0 ok, 1 runtime failure, 2 usage.
#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rawnet/baseline.hpp"
#include "rawnet/fusion.hpp"
#include "rawnet/metrics.hpp"
#include "rawnet/sinc.hpp"
#include "rawnet/training.hpp"

namespace rawnet::cli {

namespace fs = std::filesystem;

inline void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw IoError(what + " not found: " + p.string());
}

inline void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw IoError(what + " not found: " + p.string());
  require_file(p / "protocol.txt", "protocol");
}

inline void require_parent(const fs::path& p) {
  const auto parent = p.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) throw IoError("output directory does not exist: " + parent.string());
}

/// "all" keeps every utterance; otherwise one protocol split.
inline Dataset pick_split(const Dataset& data, const std::string& split) {
  if (split == "all") return data;
  return select_split(data, parse_split(split));
}

struct SynthArgs {
  std::string out;
  std::uint64_t seed = 1;
  std::size_t train = 100, dev = 30, eval = 50;
  std::vector<std::string> attacks{"A17:click"};
  std::size_t min_samples = 3200, max_samples = 4800;
};

struct TrainArgs {
  std::string data, out, log;
  std::string preset = "desk", scale = "mel";
  TrainConfig cfg;
  bool resume = false;
};

struct ScoreArgs {
  std::string checkpoint, data, out, split = "eval";
  bool final_params = false;
};

struct EvalArgs {
  std::string scores, tdcf, out, eer_method = "rocch", polarity = "bonafide-high", format = "text";
  std::vector<std::string> attacks;
};

struct BaselineTrainArgs {
  std::string data, out, split = "train";
  GmmFitOptions gmm;
  LfccConfig lfcc;
};

struct BaselineScoreArgs {
  std::string model, data, out, split = "eval";
};

struct FuseArgs {
  std::vector<std::string> fit, apply;
  std::string out, model_out, model, kind = "linear_svm";
  FusionOptions opt;
};

struct InspectArgs {
  std::string scale = "mel", out;
  std::size_t n_filters = 128, kernel_len = 129, points = 64;
};

inline void synth_data(const SynthArgs& a, std::ostream& out) {
  SynthSpec spec;
  spec.seed = a.seed;
  spec.train = {a.train, a.train};
  spec.dev = {a.dev, a.dev};
  spec.eval = {a.eval, a.eval};
  spec.min_samples = a.min_samples;
  spec.max_samples = a.max_samples;
  spec.attacks.clear();
  for (const auto& s : a.attacks) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ValueError("attack must be ID:KIND, got '" + s + "'");
    spec.attacks.push_back({s.substr(0, colon), parse_artifact(s.substr(colon + 1))});
  }
  spec.validate();
  const auto data = synth_corpus(spec);
  write_corpus(a.out, data);
  out << "wrote " << data.size() << " utterances to " << a.out << "\n";
}

inline void train_cmd(TrainArgs a, std::ostream& out) {
  require_dir(a.data, "corpus directory");
  require_parent(a.out);
  if (!a.log.empty()) require_parent(a.log);
  a.cfg.preset = parse_preset(a.preset);
  a.cfg.scale = parse_scale(a.scale);
  a.cfg.validate();
  Dataset data;
  for (auto& u : load_corpus(a.data))
    if (u.entry.split != Split::eval) data.push_back(std::move(u));

  Checkpoint state = a.resume && fs::exists(a.out) ? load_checkpoint(a.out, a.cfg) : init_training(a.cfg);
  if (state.epochs_done > 0) out << "resuming after epoch " << state.epochs_done << "\n";
  out << "training " << to_string(a.cfg.preset) << " preset (" << state.params.parameter_count()
      << " parameters, scale " << to_string(a.cfg.scale) << ") on " << data.size() << " utterances\n";
  train(state, data, [&](const Checkpoint& ck) {
    const auto& r = ck.log.back();
    out << "epoch " << r.epoch << "  train_loss " << detail::fixed(r.train_loss, 5) << "  val_loss "
        << detail::fixed(r.val_loss, 5) << "  val_eer " << detail::fixed(100 * r.val_eer, 2) << " %  "
        << detail::fixed(r.seconds, 2) << " s\n";
    save_checkpoint(a.out, ck);
    if (!a.log.empty()) write_text_file(a.log, format_train_log(ck.log));
  });
  out << "best epoch " << state.best_epoch << " (val_loss " << detail::fixed(state.best_val_loss, 5) << "); saved "
      << a.out << "\n";
}

inline void score_cmd(const ScoreArgs& a, std::ostream& out) {
  require_file(a.checkpoint, "checkpoint");
  require_dir(a.data, "corpus directory");
  require_parent(a.out);
  const auto ck = load_checkpoint(a.checkpoint);
  const auto data = pick_split(load_corpus(a.data), a.split);
  const auto scores = evaluate(a.final_params ? ck.params : ck.best, data);
  write_text_file(a.out, serialize_scores(scores));
  out << "scored " << scores.size() << " utterances with the " << (a.final_params ? "final" : "best")
      << " parameters; wrote " << a.out << "\n";
}

inline void eval_cmd(const EvalArgs& a, std::ostream& out) {
  require_file(a.scores, "score file");
  if (!a.tdcf.empty()) require_file(a.tdcf, "t-DCF config");
  if (!a.out.empty()) require_parent(a.out);
  const TdcfConfig cfg = a.tdcf.empty() ? TdcfConfig{} : parse_tdcf_config(read_text_file(a.tdcf));
  const auto method = a.eer_method == "naive" ? EerMethod::naive : EerMethod::rocch;
  const auto pol = a.polarity == "spoof-high" ? Polarity::higher_is_spoof : Polarity::higher_is_bonafide;
  const auto rep = per_attack_report(parse_scores(read_text_file(a.scores)), cfg, pol, method, a.attacks);
  const auto text = a.format == "tsv" ? format_report_tsv(rep) : format_report_text(rep);
  if (a.out.empty())
    out << text;
  else
    write_text_file(a.out, text);
}

inline void baseline_train_cmd(const BaselineTrainArgs& a, std::ostream& out) {
  require_dir(a.data, "corpus directory");
  require_parent(a.out);
  a.lfcc.validate();
  const auto data = pick_split(load_corpus(a.data), a.split);
  const auto r = baseline_train(data, a.lfcc, a.gmm);
  for (const auto* fit : {&r.bonafide_fit, &r.spoof_fit}) {
    out << (fit == &r.bonafide_fit ? "bonafide" : "spoof") << " GMM log-likelihood:";
    for (double ll : fit->log_likelihood) out << " " << detail::fixed(ll, 3);
    out << "\n";
    for (const auto& w : fit->warnings) out << "warning: " << w << "\n";
  }
  write_text_file(a.out, serialize_baseline(r.model));
  out << "wrote " << a.out << "\n";
}

inline void baseline_score_cmd(const BaselineScoreArgs& a, std::ostream& out) {
  require_file(a.model, "baseline model");
  require_dir(a.data, "corpus directory");
  require_parent(a.out);
  const auto model = parse_baseline(read_text_file(a.model));
  const auto scores = baseline_evaluate(model, pick_split(load_corpus(a.data), a.split));
  write_text_file(a.out, serialize_scores(scores));
  out << "scored " << scores.size() << " utterances; wrote " << a.out << "\n";
}

inline void fuse_cmd(FuseArgs a, std::ostream& out) {
  for (const auto& f : a.fit) require_file(f, "score file");
  for (const auto& f : a.apply) require_file(f, "score file");
  if (!a.model.empty()) require_file(a.model, "fusion model");
  if (a.fit.empty() == a.model.empty()) throw ValueError("fuse: give either --fit score files or --model");
  if (!a.apply.empty() && a.out.empty()) throw ValueError("fuse: --apply needs --out");
  if (!a.out.empty()) require_parent(a.out);
  if (!a.model_out.empty()) require_parent(a.model_out);
  auto load_all = [](const std::vector<std::string>& files) {
    std::vector<std::vector<ScoreRecord>> out;
    for (const auto& f : files) out.push_back(parse_scores(read_text_file(f)));
    return out;
  };
  FusionModel model;
  if (!a.fit.empty()) {
    a.opt.kind = parse_fusion_kind(a.kind);
    const auto r = fit_fusion(load_all(a.fit), a.opt);
    for (const auto& w : r.warnings) out << "warning: " << w << "\n";
    model = r.model;
    out << "fitted " << to_string(model.kind) << " fusion over " << model.systems() << " systems (objective "
        << detail::fixed(r.objective, 6) << ")\n";
    for (std::size_t j = 0; j < model.systems(); ++j)
      out << "  system " << j << " weight " << format_double(model.weights[j]) << "\n";
    out << "  bias " << format_double(model.bias) << "\n";
  } else {
    model = parse_fusion(read_text_file(a.model));
  }
  if (!a.model_out.empty()) write_text_file(a.model_out, serialize_fusion(model));
  if (!a.apply.empty()) {
    const auto fused = apply_fusion(model, load_all(a.apply));
    write_text_file(a.out, serialize_scores(fused));
    out << "fused " << fused.size() << " utterances; wrote " << a.out << "\n";
  }
}

inline void inspect_filters_cmd(const InspectArgs& a, std::ostream& out) {
  if (!a.out.empty()) require_parent(a.out);
  if (a.points < 2) throw ValueError("inspect-filters: --points must be at least 2");
  FilterbankConfig cfg;
  cfg.scale = parse_scale(a.scale);
  cfg.n_filters = a.n_filters;
  cfg.kernel_len = a.kernel_len;
  const SincFilterbank bank(cfg);
  std::string text = "# scale " + std::string(to_string(cfg.scale)) + ", " + std::to_string(cfg.n_filters) +
                     " filters, " + std::to_string(cfg.kernel_len) + " taps\n";
  text += "filter\tf_low_hz\tf_high_hz\n";
  for (std::size_t i = 0; i < bank.n_filters(); ++i)
    text += std::to_string(i) + '\t' + detail::fixed(bank.bands()[i].low_hz, 3) + '\t' +
            detail::fixed(bank.bands()[i].high_hz, 3) + '\n';
  text += "# magnitude response |H(f)| at " + std::to_string(a.points) + " frequencies from 0 to Nyquist\n";
  text += "filter";
  std::vector<double> freqs;
  for (std::size_t k = 0; k < a.points; ++k) {
    freqs.push_back(cfg.sample_rate / 2 * static_cast<double>(k) / static_cast<double>(a.points - 1));
    text += '\t' + detail::fixed(freqs.back(), 1);
  }
  text += '\n';
  for (std::size_t i = 0; i < bank.n_filters(); ++i) {
    text += std::to_string(i);
    for (double f : freqs) text += '\t' + detail::fixed(bank.magnitude_response(i, f), 6);
    text += '\n';
  }
  if (a.out.empty())
    out << text;
  else
    write_text_file(a.out, text);
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Raw-waveform spoofing countermeasure with fixed sinc filters"};
  app.require_subcommand(1);
  const std::vector<std::string> scales{"mel", "inverse_mel", "linear"};
  const std::vector<std::string> splits{"train", "dev", "eval", "all"};

  SynthArgs synth;
  auto* s = app.add_subcommand("synth-data", "Generate a synthetic bona fide/spoof corpus");
  s->add_option("--out", synth.out, "Output corpus directory")->required();
  s->add_option("--seed", synth.seed, "Corpus seed")->capture_default_str();
  s->add_option("--train", synth.train, "Utterances per class in the train split")->capture_default_str();
  s->add_option("--dev", synth.dev, "Utterances per class in the dev split")->capture_default_str();
  s->add_option("--eval", synth.eval, "Utterances per class in the eval split")->capture_default_str();
  s->add_option("--attack", synth.attacks, "Attack as ID:KIND (click, phase_rotation, band_gap, hum); repeatable")
      ->capture_default_str();
  s->add_option("--min-samples", synth.min_samples, "Shortest utterance in samples")->capture_default_str();
  s->add_option("--max-samples", synth.max_samples, "Longest utterance in samples")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train the countermeasure on the train and dev splits of a corpus");
  t->add_option("--data", tr.data, "Corpus directory")->required();
  t->add_option("--out", tr.out, "Checkpoint path (rewritten after every epoch)")->required();
  t->add_option("--preset", tr.preset, "Model preset")->check(CLI::IsMember({"paper", "desk"}))->capture_default_str();
  t->add_option("--scale", tr.scale, "Filterbank scale")->check(CLI::IsMember(scales))->capture_default_str();
  t->add_option("--epochs", tr.cfg.epochs, "Epoch budget")->capture_default_str();
  t->add_option("--batch-size", tr.cfg.batch_size, "Mini-batch size")->capture_default_str();
  t->add_option("--lr", tr.cfg.learning_rate, "ADAM learning rate")->capture_default_str();
  t->add_option("--seed", tr.cfg.seed, "Initialization and shuffling seed")->capture_default_str();
  t->add_option("--val-fraction", tr.cfg.val_fraction, "Fraction of dev held out for validation")
      ->capture_default_str();
  t->add_flag("--random-crop", tr.cfg.random_crop, "Crop long training utterances at a seeded random offset");
  t->add_option("--log", tr.log, "Write the per-epoch log as TSV");
  t->add_flag("--resume", tr.resume, "Continue from --out if it exists");

  ScoreArgs sc;
  auto* c = app.add_subcommand("score", "Score a corpus split with a trained checkpoint");
  c->add_option("--checkpoint", sc.checkpoint, "Checkpoint path")->required();
  c->add_option("--data", sc.data, "Corpus directory")->required();
  c->add_option("--split", sc.split, "Split to score")->check(CLI::IsMember(splits))->capture_default_str();
  c->add_option("--out", sc.out, "Score file")->required();
  c->add_flag("--final", sc.final_params, "Use the last epoch instead of the best validation epoch");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Pooled EER, pooled min t-DCF and per-attack table for a score file");
  e->add_option("--scores", ev.scores, "Score file")->required();
  e->add_option("--tdcf", ev.tdcf, "t-DCF cost/prior file (defaults to built-in constants)");
  e->add_option("--eer-method", ev.eer_method, "EER estimator")
      ->check(CLI::IsMember({"rocch", "naive"}))
      ->capture_default_str();
  e->add_option("--polarity", ev.polarity, "Score direction")
      ->check(CLI::IsMember({"bonafide-high", "spoof-high"}))
      ->capture_default_str();
  e->add_option("--format", ev.format, "Report format")->check(CLI::IsMember({"text", "tsv"}))->capture_default_str();
  e->add_option("--expect-attack", ev.attacks, "Attack id expected in the scores; repeatable");
  e->add_option("--out", ev.out, "Write the report to a file instead of stdout");

  BaselineTrainArgs bt;
  auto* b = app.add_subcommand("baseline-train", "Fit the LFCC-GMM baseline");
  b->add_option("--data", bt.data, "Corpus directory")->required();
  b->add_option("--split", bt.split, "Split to train on")->check(CLI::IsMember(splits))->capture_default_str();
  b->add_option("--out", bt.out, "Model path")->required();
  b->add_option("--components", bt.gmm.components, "Mixture components per class")->capture_default_str();
  b->add_option("--iterations", bt.gmm.iterations, "EM iterations")->capture_default_str();
  b->add_option("--kmeans-iterations", bt.gmm.kmeans_iterations, "k-means initialization rounds")
      ->capture_default_str();
  b->add_option("--seed", bt.gmm.seed, "Initialization seed")->capture_default_str();
  b->add_option("--n-filters", bt.lfcc.n_filters, "Linear filters")->capture_default_str();
  b->add_option("--n-ceps", bt.lfcc.n_ceps, "Static cepstral coefficients")->capture_default_str();

  BaselineScoreArgs bs;
  auto* bsc = app.add_subcommand("baseline-score", "Score a corpus split with the LFCC-GMM baseline");
  bsc->add_option("--model", bs.model, "Model path")->required();
  bsc->add_option("--data", bs.data, "Corpus directory")->required();
  bsc->add_option("--split", bs.split, "Split to score")->check(CLI::IsMember(splits))->capture_default_str();
  bsc->add_option("--out", bs.out, "Score file")->required();

  FuseArgs fu;
  auto* f = app.add_subcommand("fuse", "Fit and/or apply score-level fusion");
  f->add_option("--fit", fu.fit, "Score file to fit on, one per system; repeatable");
  f->add_option("--model", fu.model, "Existing fusion model (instead of --fit)");
  f->add_option("--apply", fu.apply, "Score file to fuse, one per system in fit order; repeatable");
  f->add_option("--out", fu.out, "Fused score file");
  f->add_option("--model-out", fu.model_out, "Write the fusion model");
  f->add_option("--kind", fu.kind, "Separator")
      ->check(CLI::IsMember({"linear_svm", "svm", "logistic"}))
      ->capture_default_str();
  f->add_option("--c", fu.opt.c, "Inverse regularization strength")->capture_default_str();
  f->add_option("--iterations", fu.opt.iterations, "Full-batch descent iterations")->capture_default_str();

  InspectArgs in;
  auto* i = app.add_subcommand("inspect-filters", "Dump sinc filter band edges and sampled magnitude responses");
  i->add_option("--scale", in.scale, "Filterbank scale")->check(CLI::IsMember(scales))->capture_default_str();
  i->add_option("--n-filters", in.n_filters, "Number of filters")->capture_default_str();
  i->add_option("--kernel-len", in.kernel_len, "Taps per filter")->capture_default_str();
  i->add_option("--points", in.points, "Frequencies sampled per response")->capture_default_str();
  i->add_option("--out", in.out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    return app.exit(ex, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*s) synth_data(synth, out);
    else if (*t) train_cmd(tr, out);
    else if (*c) score_cmd(sc, out);
    else if (*e) eval_cmd(ev, out);
    else if (*b) baseline_train_cmd(bt, out);
    else if (*bsc) baseline_score_cmd(bs, out);
    else if (*f) fuse_cmd(fu, out);
    else if (*i) inspect_filters_cmd(in, out);
  } catch (const Error& ex) {
    err << "error: " << ex.kind() << ": " << ex.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& ex) {
    err << "error: io_error: " << ex.what() << "\n";
    return 1;
  } catch (const std::exception& ex) {
    err << "error: internal_error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace rawnet::cli
