// Command-line front end: one subcommand per pipeline stage plus `pipeline`.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ppgauth/archive.hpp"
#include "ppgauth/checkpoint.hpp"
#include "ppgauth/config.hpp"
#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"
#include "ppgauth/pipeline.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ppgauth;

namespace {

fs::path default_run_dir() {
  const char* env = std::getenv("PPGAUTH_RUN_DIR");
  return env && *env ? fs::path(env) : fs::path("ppgauth_run");
}

void info(const std::string& msg) { std::cerr << msg << '\n'; }

// A labelled set of recordings gathered from a manifest, a directory of CSVs
// or a single CSV.
struct Recordings {
  std::vector<TimeSeries> series;
  std::vector<int> labels;
  std::vector<std::string> files;  // output file name per recording
  std::vector<Origin> origins;
};

Recordings gather(const fs::path& input) {
  Recordings r;
  if (fs::is_regular_file(input) && input.extension() == ".json") {
    const DatasetManifest m = load_manifest(input);
    r.series = load_recordings(input, m);
    for (const auto& e : m.entries) {
      r.labels.push_back(e.label);
      r.files.push_back(fs::path(e.path).filename().string());
      r.origins.push_back(e.origin);
    }
    return r;
  }
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    if (fs::exists(input / "manifest.json")) return gather(input / "manifest.json");
    for (const auto& de : fs::directory_iterator(input)) {
      if (de.is_regular_file() && de.path().extension() == ".csv") files.push_back(de.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::is_regular_file(input)) {
    files.push_back(input);
  } else {
    throw Error("input not found: " + input.string());
  }
  if (files.empty()) throw Error("no recordings under " + input.string());
  std::map<std::string, int> ids;
  for (const auto& f : files) {
    r.series.push_back(load_recording(f));
    r.files.push_back(f.filename().string());
    r.origins.push_back(Origin::external);
    ids.emplace(r.series.back().subject_id(), 0);
  }
  int next = 0;
  for (auto& [_, label] : ids) label = next++;
  for (const auto& s : r.series) r.labels.push_back(ids.at(s.subject_id()));
  return r;
}

void write_manifest_for(const fs::path& dir, const Recordings& r) {
  DatasetManifest m;
  for (std::size_t i = 0; i < r.series.size(); ++i) {
    m.entries.push_back({r.files[i], r.series[i].subject_id(), r.labels[i], r.series[i].sample_rate_hz(),
                         r.series[i].duration_s(), r.origins[i]});
  }
  save_manifest(dir / "manifest.json", m);
}

// Config file first, then explicitly given flags.
RunConfig base_config(const std::string& config_path) {
  return config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
}

ArchiveDataset subset_by_split(const ArchiveDataset& full, const std::string& which, double fraction,
                               std::uint64_t seed, std::vector<std::size_t>& picked) {
  picked.clear();
  if (which == "all") {
    for (std::size_t i = 0; i < full.data.samples.size(); ++i) picked.push_back(i);
  } else {
    const auto labels = full.data.labels();
    const Split sp = stratified_split(labels, fraction, seed);
    picked = which == "train" ? sp.train : sp.test;
  }
  ArchiveDataset out;
  out.class_ids = full.class_ids;
  out.data.image_size = full.data.image_size;
  out.data.steps = full.data.steps;
  out.data.num_classes = full.data.num_classes;
  for (std::size_t i : picked) {
    out.data.samples.push_back(full.data.samples[i]);
    out.index.entries.push_back(full.index.entries[i]);
  }
  return out;
}

std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

void check_model_matches(const HybridModel<float>& model, const Dataset& data) {
  const auto& c = model.config();
  if (c.input_size != data.image_size) throw Error("checkpoint expects " + std::to_string(c.input_size) +
                                                   " px scalograms, archive has " + std::to_string(data.image_size));
  if (c.num_classes != data.num_classes) throw Error("checkpoint and archive disagree on the class count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PPG biometric authentication toolkit"};
  app.require_subcommand(1);
  app.footer("Outputs default to subdirectories of $PPGAUTH_RUN_DIR (currently '" + default_run_dir().string() +
             "').");

  std::string config_path;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI configuration file (flags override it)")->check(CLI::ExistingFile);
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic PPG corpus (CSVs + manifest.json)");
  std::size_t g_subjects = 8;
  double g_duration = 70.0, g_fs = 14.0;
  std::uint64_t g_seed = 7;
  std::string g_out;
  gen->add_option("--subjects", g_subjects, "Number of subjects")->capture_default_str();
  gen->add_option("--duration", g_duration, "Recording length in seconds")->capture_default_str();
  gen->add_option("--fs", g_fs, "Sample rate in Hz")->capture_default_str();
  gen->add_option("--seed", g_seed, "Base seed")->capture_default_str();
  gen->add_option("--out", g_out, "Output directory (default: <run dir>/data)");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Detrend, clip, bandpass, resample and normalize recordings");
  std::string p_input, p_out;
  bool p_dump = false;
  pre->add_option("--input", p_input, "Recording CSV, directory of CSVs, or manifest.json")->required();
  pre->add_option("--out", p_out, "Output directory (default: <run dir>/preprocessed)");
  pre->add_flag("--dump-stages", p_dump, "Also write every intermediate stage as CSV under stages/");
  add_config(pre);

  // segment
  auto* seg = app.add_subcommand("segment", "Cut preprocessed recordings into overlapping windows");
  std::string s_input, s_out;
  seg->add_option("--input", s_input, "Preprocessed CSV, directory, or manifest.json")->required();
  seg->add_option("--out", s_out, "Archive directory (default: <run dir>/segments)");
  add_config(seg);

  // scalogram
  auto* scal = app.add_subcommand("scalogram", "Morlet scalograms for every segment of an archive");
  std::string c_input, c_out;
  bool c_csv = false;
  scal->add_option("--input", c_input, "Segment archive directory (from `segment`)")->required();
  scal->add_option("--out", c_out, "Archive directory (default: <run dir>/archive)");
  scal->add_flag("--csv", c_csv, "Also write (time_s, freq_hz, magnitude) CSV dumps under csv/");
  add_config(scal);

  // train
  auto* tr = app.add_subcommand("train", "Train the hybrid model on a scalogram archive");
  std::string t_data, t_out, t_report;
  std::optional<std::size_t> t_epochs, t_batch;
  std::optional<double> t_lr;
  std::optional<std::uint64_t> t_seed;
  tr->add_option("--data-dir", t_data, "Scalogram archive directory")->required();
  tr->add_option("--epochs", t_epochs, "Training epochs");
  tr->add_option("--lr", t_lr, "Adam learning rate");
  tr->add_option("--batch", t_batch, "Mini-batch size");
  tr->add_option("--seed", t_seed, "Seed for initialization, split and shuffling");
  tr->add_option("--out", t_out, "Checkpoint path (default: <run dir>/checkpoint.bin)");
  tr->add_option("--report", t_report, "Per-epoch metrics CSV (default: <run dir>/train_metrics.csv)");
  add_config(tr);

  // enroll
  auto* en = app.add_subcommand("enroll", "Build subject templates from archive embeddings");
  std::string e_ckpt, e_data, e_gallery, e_split = "train";
  en->add_option("--checkpoint", e_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  en->add_option("--data-dir", e_data, "Scalogram archive directory")->required();
  en->add_option("--gallery", e_gallery, "Gallery JSON to write (default: <run dir>/gallery.json)");
  en->add_option("--split", e_split, "Which examples to enroll")
      ->check(CLI::IsMember({"train", "test", "all"}))
      ->capture_default_str();
  add_config(en);

  // authenticate
  auto* au = app.add_subcommand("authenticate", "Identify the subject of a recording against a gallery");
  std::string a_ckpt, a_gallery, a_input;
  std::optional<double> a_threshold;
  std::vector<std::string> a_calibrate;
  au->add_option("--checkpoint", a_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  au->add_option("--gallery", a_gallery, "Gallery JSON")->required()->check(CLI::ExistingFile);
  au->add_option("--input", a_input, "Raw recording CSV")->required()->check(CLI::ExistingFile);
  auto* thr = au->add_option("--threshold", a_threshold, "Acceptance threshold on cosine similarity");
  auto* cal = au->add_option("--calibrate", a_calibrate, "Genuine and impostor score files; threshold at the EER")
                  ->expected(2)
                  ->check(CLI::ExistingFile);
  thr->excludes(cal);
  add_config(au);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Accuracy, ROC, AUC and EER for a checkpoint or score files");
  std::string v_ckpt, v_data, v_gallery, v_out, v_genuine, v_impostor, v_split = "test";
  std::optional<double> v_threshold;
  ev->add_option("--checkpoint", v_ckpt, "Model checkpoint")->check(CLI::ExistingFile);
  ev->add_option("--data-dir", v_data, "Scalogram archive directory");
  ev->add_option("--gallery", v_gallery, "Gallery JSON (default: enroll the training split)");
  ev->add_option("--split", v_split, "Which examples to evaluate")
      ->check(CLI::IsMember({"train", "test", "all"}))
      ->capture_default_str();
  ev->add_option("--genuine", v_genuine, "Genuine score file (score-only mode)")->check(CLI::ExistingFile);
  ev->add_option("--impostor", v_impostor, "Impostor score file (score-only mode)")->check(CLI::ExistingFile);
  ev->add_option("--threshold", v_threshold, "Operating threshold (default: EER threshold)");
  ev->add_option("--out", v_out, "Report directory (default: <run dir>/evaluation)");
  add_config(ev);

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Generate data and run every stage end to end");
  std::optional<std::size_t> l_subjects, l_epochs;
  std::optional<std::uint64_t> l_seed;
  std::string l_run_dir;
  bool l_no_ablation = false;
  pl->add_option("--subjects", l_subjects, "Number of synthetic subjects");
  pl->add_option("--seed", l_seed, "Seed for data generation and training");
  pl->add_option("--epochs", l_epochs, "Training epochs");
  pl->add_option("--run-dir", l_run_dir, "Run directory (default: $PPGAUTH_RUN_DIR or ./ppgauth_run)");
  pl->add_flag("--no-ablation", l_no_ablation, "Skip the LSTM-only comparison model");
  add_config(pl);

  CLI11_PARSE(app, argc, argv);

  const fs::path run_dir = default_run_dir();
  std::string stage = app.get_subcommands().front()->get_name();
  try {
    if (*gen) {
      CorpusConfig cfg;
      cfg.subjects = g_subjects;
      cfg.duration_s = g_duration;
      cfg.fs_hz = g_fs;
      cfg.seed = g_seed;
      const fs::path out = g_out.empty() ? run_dir / "data" : fs::path(g_out);
      const auto m = generate_corpus(cfg, out);
      info("wrote " + std::to_string(m.entries.size()) + " recordings to " + out.string());
    } else if (*pre) {
      const RunConfig cfg = base_config(config_path);
      const fs::path out = p_out.empty() ? run_dir / "preprocessed" : fs::path(p_out);
      const Recordings in = gather(p_input);
      Recordings done = in;
      for (std::size_t i = 0; i < in.series.size(); ++i) {
        const auto stages = preprocess_stages(in.series[i], cfg.preprocess);
        save_recording(out / in.files[i], stages.back().signal);
        done.series[i] = stages.back().signal;
        if (p_dump) {
          const fs::path dir = out / "stages" / fs::path(in.files[i]).stem();
          for (std::size_t k = 0; k < stages.size(); ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "%02zu_%s.csv", k, stages[k].name.c_str());
            save_recording(dir / name, stages[k].signal);
          }
        }
      }
      write_manifest_for(out, done);
      info("preprocessed " + std::to_string(in.series.size()) + " recordings into " + out.string());
    } else if (*seg) {
      const RunConfig cfg = base_config(config_path);
      const fs::path out = s_out.empty() ? run_dir / "segments" : fs::path(s_out);
      const Recordings in = gather(s_input);
      fs::create_directories(out);
      ArchiveIndex index;
      std::size_t g = 0;
      for (std::size_t r = 0; r < in.series.size(); ++r) {
        const auto segs = segment(in.series[r], cfg.segmentation);
        for (std::size_t k = 0; k < segs.size(); ++k, ++g) {
          char name[32];
          std::snprintf(name, sizeof name, "seg_%05zu.bin", g);
          const std::vector<float> v(segs[k].samples.begin(), segs[k].samples.end());
          write_matrix(out / name, 1, v.size(), v);
          ArchiveEntry e;
          e.segment_file = name;
          e.subject_id = in.series[r].subject_id();
          e.label = in.labels[r];
          e.segment_index = k;
          e.start_index = segs[k].start_index;
          e.padded = segs[k].padded;
          e.sample_rate_hz = segs[k].sample_rate_hz;
          index.entries.push_back(std::move(e));
        }
      }
      save_archive_index(out, index);
      info("wrote " + std::to_string(g) + " segments to " + out.string());
    } else if (*scal) {
      const RunConfig cfg = base_config(config_path);
      const fs::path in_dir = c_input;
      const fs::path out = c_out.empty() ? run_dir / "archive" : fs::path(c_out);
      ArchiveIndex index = load_archive_index(in_dir);
      fs::create_directories(out);
      const std::size_t side = cfg.model.input_size;
      for (std::size_t i = 0; i < index.entries.size(); ++i) {
        auto& e = index.entries[i];
        if (e.segment_file.empty()) throw Error("archive entry " + std::to_string(i) + " has no segment file");
        const FloatMatrix m = read_matrix(in_dir / e.segment_file);
        Segment sg;
        sg.samples.assign(m.data.begin(), m.data.end());
        sg.sample_rate_hz = e.sample_rate_hz;
        sg.subject_id = e.subject_id;
        sg.start_index = e.start_index;
        sg.padded = e.padded;
        const Scalogram img = scalogram(sg, cfg.wavelet, side, side);
        char name[32];
        std::snprintf(name, sizeof name, "scal_%05zu.bin", i);
        e.scalogram_file = name;
        write_matrix(out / name, img.height, img.width, img.pixels);
        if (fs::weakly_canonical(in_dir) != fs::weakly_canonical(out)) {
          write_matrix(out / e.segment_file, m.height, m.width, m.data);
        }
        if (c_csv) {
          std::string csv = "time_s,freq_hz,magnitude\n";
          char row[96];
          for (std::size_t r = 0; r < img.height; ++r) {
            for (std::size_t c = 0; c < img.width; ++c) {
              std::snprintf(row, sizeof row, "%.9g,%.9g,%.9g\n", img.time_axis_s[c], img.freq_axis_hz[r],
                            static_cast<double>(img.at(r, c)));
              csv += row;
            }
          }
          std::snprintf(name, sizeof name, "scal_%05zu.csv", i);
          write_file_atomic(out / "csv" / name, csv);
        }
      }
      save_archive_index(out, index);
      info("wrote " + std::to_string(index.entries.size()) + " scalograms to " + out.string());
    } else if (*tr) {
      RunConfig cfg = base_config(config_path);
      if (t_epochs) cfg.train.epochs = *t_epochs;
      if (t_lr) cfg.train.learning_rate = *t_lr;
      if (t_batch) cfg.train.batch_size = *t_batch;
      if (t_seed) cfg.train.seed = *t_seed;
      cfg.train.validate();
      const ArchiveDataset ad = load_archive_dataset(t_data);
      ModelConfig mc = cfg.model;
      mc.num_classes = ad.data.num_classes;
      mc.input_size = ad.data.image_size;
      mc.lstm.steps = ad.data.steps;
      HybridModel<float> model(mc, cfg.train.seed);
      const auto labels = ad.data.labels();
      const Split split = stratified_split(labels, cfg.train.train_fraction, cfg.train.seed);
      const auto report = train(model, ad.data, split, cfg.train, [](const EpochMetrics& m) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "epoch %zu loss %.4f train_acc %.3f test_acc %.3f", m.epoch, m.train_loss,
                      m.train_accuracy, m.test_accuracy);
        info(buf);
      });
      const fs::path ck = t_out.empty() ? run_dir / "checkpoint.bin" : fs::path(t_out);
      const fs::path rep = t_report.empty() ? run_dir / "train_metrics.csv" : fs::path(t_report);
      save_checkpoint(ck, model, cfg.train.seed, ad.class_ids);
      write_file_atomic(rep, train_report_csv(report));
      info("checkpoint written to " + ck.string());
    } else if (*en) {
      const RunConfig cfg = base_config(config_path);
      const Checkpoint ck = load_checkpoint(e_ckpt);
      const ArchiveDataset ad = load_archive_dataset(e_data);
      check_model_matches(ck.model, ad.data);
      std::vector<std::size_t> picked;
      const ArchiveDataset part = subset_by_split(ad, e_split, cfg.train.train_fraction, ck.seed, picked);
      const Evaluation evn = evaluate(ck.model, part.data, all_indices(part.data.samples.size()));
      const auto gallery = enroll_gallery(evn.embeddings, part.data.labels(), ad.class_ids);
      const fs::path out = e_gallery.empty() ? run_dir / "gallery.json" : fs::path(e_gallery);
      save_gallery(out, gallery);
      info("enrolled " + std::to_string(gallery.size()) + " subjects into " + out.string());
    } else if (*au) {
      const RunConfig cfg = base_config(config_path);
      const Checkpoint ck = load_checkpoint(a_ckpt);
      const auto gallery = load_gallery(a_gallery);
      double tau = 0.0;
      if (a_threshold) {
        tau = *a_threshold;
      } else if (a_calibrate.size() == 2) {
        tau = calibrate_threshold(load_scores(a_calibrate[0]), load_scores(a_calibrate[1])).threshold;
      } else if (cfg.auth.threshold) {
        tau = *cfg.auth.threshold;
      } else {
        throw Error("authenticate needs --threshold, --calibrate or an [auth] threshold in the config");
      }
      const TimeSeries raw = load_recording(a_input);
      const auto segs = prepare_segments(raw, cfg);
      const std::size_t side = ck.model.config().input_size;
      json out;
      out["threshold"] = tau;
      out["segments"] = json::array();
      std::vector<double> mean;
      for (std::size_t k = 0; k < segs.size(); ++k) {
        const Scalogram img = scalogram(segs[k], cfg.wavelet, side, side);
        const std::vector<float> seq(segs[k].samples.begin(), segs[k].samples.end());
        const auto e = embed(ck.model, img.pixels, seq);
        if (mean.empty()) mean.assign(e.size(), 0.0);
        for (std::size_t j = 0; j < e.size(); ++j) mean[j] += e[j] / static_cast<double>(segs.size());
        const AuthDecision d = identify(e, gallery, tau);
        out["segments"].push_back({{"segment", k},
                                   {"best", gallery[d.best_index].subject_id},
                                   {"score", d.score},
                                   {"accepted", d.accepted}});
      }
      const AuthDecision d = identify(mean, gallery, tau);
      out["decision"] = {{"best", gallery[d.best_index].subject_id},
                         {"score", d.score},
                         {"accepted", d.accepted},
                         {"subject_id", d.subject_id ? json(*d.subject_id) : json(nullptr)}};
      std::cout << out.dump(2) << '\n';
      return d.accepted ? 0 : 3;
    } else if (*ev) {
      const RunConfig cfg = base_config(config_path);
      const fs::path out = v_out.empty() ? run_dir / "evaluation" : fs::path(v_out);
      if (!v_genuine.empty() || !v_impostor.empty()) {
        if (v_genuine.empty() || v_impostor.empty()) throw Error("score mode needs both --genuine and --impostor");
        const auto g = load_scores(v_genuine);
        const auto im = load_scores(v_impostor);
        const RocCurve c = roc(g, im);
        const auto cal = calibrate_threshold(g, im);
        const double tau = v_threshold.value_or(cal.threshold);
        const std::vector<std::pair<std::string, double>> rows = {
            {"auc", auc(c)}, {"eer", cal.eer}, {"eer_threshold", cal.threshold}, {"threshold", tau},
            {"far", false_accept_rate(im, tau)}, {"frr", false_reject_rate(g, tau)}};
        json doc;
        for (const auto& [k, v] : rows) doc[k] = v;
        doc["roc"] = json::array();
        for (const auto& p : c.points) doc["roc"].push_back({{"fpr", p.fpr}, {"tpr", p.tpr}});
        write_file_atomic(out / "metrics.csv", metrics_csv(rows));
        write_file_atomic(out / "metrics.json", doc.dump(2) + "\n");
      } else {
        if (v_ckpt.empty() || v_data.empty()) throw Error("evaluate needs --checkpoint and --data-dir, or score files");
        const Checkpoint ck = load_checkpoint(v_ckpt);
        const ArchiveDataset ad = load_archive_dataset(v_data);
        check_model_matches(ck.model, ad.data);
        std::vector<SubjectTemplate> gallery;
        std::vector<std::size_t> picked;
        if (!v_gallery.empty()) {
          gallery = load_gallery(v_gallery);
        } else {
          const ArchiveDataset tr_part = subset_by_split(ad, "train", cfg.train.train_fraction, ck.seed, picked);
          const Evaluation te = evaluate(ck.model, tr_part.data, all_indices(tr_part.data.samples.size()));
          gallery = enroll_gallery(te.embeddings, tr_part.data.labels(), ad.class_ids);
        }
        const ArchiveDataset part = subset_by_split(ad, v_split, cfg.train.train_fraction, ck.seed, picked);
        const Evaluation te = evaluate(ck.model, part.data, all_indices(part.data.samples.size()));
        const auto labels = part.data.labels();
        const AuthEvaluation res =
            evaluate_authentication(te, labels, gallery, ad.data.num_classes, v_threshold ? v_threshold : cfg.auth.threshold);
        write_file_atomic(out / "metrics.csv", metrics_csv(metrics_rows(res)));
        write_file_atomic(out / "metrics.json", metrics_json(res, ad.class_ids));
        write_file_atomic(out / "genuine_scores.csv", scores_csv(res.scores.genuine));
        write_file_atomic(out / "impostor_scores.csv", scores_csv(res.scores.impostor));
      }
      std::cout << read_file(out / "metrics.csv");
    } else if (*pl) {
      RunConfig cfg = base_config(config_path);
      if (l_subjects) cfg.data.subjects = *l_subjects;
      if (l_seed) {
        cfg.data.seed = *l_seed;
        cfg.train.seed = *l_seed;
      }
      if (l_epochs) cfg.train.epochs = *l_epochs;
      if (l_no_ablation) cfg.ablation = false;
      const fs::path dir = l_run_dir.empty() ? run_dir : fs::path(l_run_dir);
      const auto res = run_pipeline(cfg, dir, info);
      std::cout << read_file(dir / "metrics.csv");
      (void)res;
    }
  } catch (const std::exception& e) {
    json err;
    err["error"] = e.what();
    err["subcommand"] = stage;
    if (const auto* se = dynamic_cast<const StageError*>(&e)) err["stage"] = se->stage();
    if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
      err["file"] = pe->path();
      err["line"] = pe->line();
      err["column"] = pe->column();
    }
    if (dynamic_cast<const InvalidArgument*>(&e)) err["kind"] = "invalid_argument";
    else if (dynamic_cast<const ParseError*>(&e)) err["kind"] = "parse_error";
    else if (dynamic_cast<const StageError*>(&e)) err["kind"] = "stage_error";
    else err["kind"] = "error";
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}
