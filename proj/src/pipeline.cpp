#include "ppgauth/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "ppgauth/checkpoint.hpp"
#include "ppgauth/error.hpp"

namespace ppgauth {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::vector<Segment> prepare_segments(const TimeSeries& raw, const RunConfig& cfg) {
  return segment(preprocess(raw, cfg.preprocess), cfg.segmentation);
}

ArchiveIndex build_archive(const std::vector<TimeSeries>& recordings, std::span<const int> labels,
                           const RunConfig& cfg, const fs::path& dir) {
  if (recordings.size() != labels.size()) throw InvalidArgument("build_archive: one label per recording required");
  fs::create_directories(dir);
  const std::size_t side = cfg.model.input_size;
  ArchiveIndex index;
  std::size_t g = 0;
  for (std::size_t r = 0; r < recordings.size(); ++r) {
    const auto segments = prepare_segments(recordings[r], cfg);
    for (std::size_t k = 0; k < segments.size(); ++k, ++g) {
      const Segment& seg = segments[k];
      char name[32];
      ArchiveEntry e;
      std::snprintf(name, sizeof name, "scal_%05zu.bin", g);
      e.scalogram_file = name;
      std::snprintf(name, sizeof name, "seg_%05zu.bin", g);
      e.segment_file = name;
      e.subject_id = recordings[r].subject_id();
      e.label = labels[r];
      e.segment_index = k;
      e.start_index = seg.start_index;
      e.padded = seg.padded;
      e.sample_rate_hz = seg.sample_rate_hz;

      const Scalogram img = scalogram(seg, cfg.wavelet, side, side);
      write_matrix(dir / e.scalogram_file, img.height, img.width, img.pixels);
      const std::vector<float> samples(seg.samples.begin(), seg.samples.end());
      write_matrix(dir / e.segment_file, 1, samples.size(), samples);
      index.entries.push_back(std::move(e));
    }
  }
  save_archive_index(dir, index);
  return index;
}

ArchiveDataset load_archive_dataset(const fs::path& dir) {
  ArchiveDataset out;
  out.index = load_archive_index(dir);
  if (out.index.entries.empty()) throw InvalidArgument("archive " + dir.string() + " is empty");
  std::map<int, std::string> ids;
  for (const auto& e : out.index.entries) {
    if (e.segment_file.empty()) throw InvalidArgument("archive entry " + e.scalogram_file + " has no segment file");
    const FloatMatrix img = read_matrix(dir / e.scalogram_file);
    const FloatMatrix seq = read_matrix(dir / e.segment_file);
    if (img.height != img.width) throw ShapeError("scalogram " + e.scalogram_file + " is not square");
    if (out.data.samples.empty()) {
      out.data.image_size = img.height;
      out.data.steps = seq.height * seq.width;
    } else if (img.height != out.data.image_size || seq.height * seq.width != out.data.steps) {
      throw ShapeError("archive entries have inconsistent sizes (" + e.scalogram_file + ")");
    }
    const auto [it, fresh] = ids.emplace(e.label, e.subject_id);
    if (!fresh && it->second != e.subject_id) throw InvalidArgument("archive maps label " + std::to_string(e.label) +
                                                                    " to several subjects");
    out.data.samples.push_back({img.data, seq.data, e.label});
  }
  int expect = 0;
  for (const auto& [label, id] : ids) {
    if (label != expect++) throw InvalidArgument("archive labels are not contiguous from 0");
    out.class_ids.push_back(id);
  }
  out.data.num_classes = ids.size();
  out.data.validate();
  return out;
}

std::vector<SubjectTemplate> enroll_gallery(const std::vector<std::vector<double>>& embeddings,
                                            std::span<const int> labels, const std::vector<std::string>& class_ids) {
  if (embeddings.size() != labels.size()) throw InvalidArgument("enroll_gallery: one label per embedding required");
  std::vector<std::vector<std::vector<double>>> per(class_ids.size());
  for (std::size_t i = 0; i < labels.size(); ++i) per.at(static_cast<std::size_t>(labels[i])).push_back(embeddings[i]);
  std::vector<SubjectTemplate> gallery;
  for (std::size_t c = 0; c < per.size(); ++c) gallery.push_back(enroll(per[c], class_ids[c]));
  return gallery;
}

ScoreSets score_queries(const std::vector<std::vector<double>>& embeddings, std::span<const int> labels,
                        const std::vector<SubjectTemplate>& gallery) {
  if (embeddings.size() != labels.size()) throw InvalidArgument("score_queries: one label per embedding required");
  ScoreSets s;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t t = 0; t < gallery.size(); ++t) {
      const double v = similarity(embeddings[i], gallery[t]);
      (static_cast<int>(t) == labels[i] ? s.genuine : s.impostor).push_back(v);
    }
  }
  return s;
}

AuthEvaluation evaluate_authentication(const Evaluation& test, std::span<const int> test_labels,
                                       const std::vector<SubjectTemplate>& gallery, std::size_t num_classes,
                                       std::optional<double> threshold,
                                       const std::vector<std::vector<double>>* held_out) {
  AuthEvaluation ev;
  ev.classifier = classification_report(test_labels, test.predictions, num_classes);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.embeddings.size(); ++i) {
    if (static_cast<int>(closest_template(test.embeddings[i], gallery)) == test_labels[i]) ++hits;
  }
  ev.template_accuracy = static_cast<double>(hits) / static_cast<double>(test.embeddings.size());
  ev.scores = score_queries(test.embeddings, test_labels, gallery);
  if (held_out) {
    ev.scores.impostor.clear();
    for (const auto& q : *held_out) {
      for (const auto& t : gallery) ev.scores.impostor.push_back(similarity(q, t));
    }
  }
  ev.roc = roc(ev.scores.genuine, ev.scores.impostor);
  ev.auc = auc(ev.roc);
  ev.eer = calibrate_threshold(ev.scores.genuine, ev.scores.impostor);
  ev.threshold = threshold.value_or(ev.eer.threshold);
  const double far = false_accept_rate(ev.scores.impostor, ev.threshold);
  const double frr = false_reject_rate(ev.scores.genuine, ev.threshold);
  const double ng = static_cast<double>(ev.scores.genuine.size());
  const double ni = static_cast<double>(ev.scores.impostor.size());
  ev.verification_accuracy = ((1.0 - frr) * ng + (1.0 - far) * ni) / (ng + ni);
  return ev;
}

std::vector<std::pair<std::string, double>> metrics_rows(const AuthEvaluation& ev) {
  return {{"closed_set_accuracy", ev.classifier.accuracy},
          {"macro_sensitivity", ev.classifier.macro_sensitivity},
          {"macro_specificity", ev.classifier.macro_specificity},
          {"template_accuracy", ev.template_accuracy},
          {"auc", ev.auc},
          {"eer", ev.eer.eer},
          {"eer_threshold", ev.eer.threshold},
          {"threshold", ev.threshold},
          {"verification_accuracy", ev.verification_accuracy},
          {"genuine_scores", static_cast<double>(ev.scores.genuine.size())},
          {"impostor_scores", static_cast<double>(ev.scores.impostor.size())}};
}

std::string metrics_json(const AuthEvaluation& ev, const std::vector<std::string>& class_ids,
                         const std::string& extra_json) {
  json doc;
  for (const auto& [k, v] : metrics_rows(ev)) doc[k] = v;
  doc["far_at_eer"] = ev.eer.far;
  doc["frr_at_eer"] = ev.eer.frr;
  doc["confusion"] = ev.classifier.confusion;
  json per = json::array();
  for (std::size_t k = 0; k < ev.classifier.per_class.size(); ++k) {
    const auto& c = ev.classifier.per_class[k];
    per.push_back({{"label", k},
                   {"subject_id", k < class_ids.size() ? class_ids[k] : std::string()},
                   {"tp", c.tp},
                   {"tn", c.tn},
                   {"fp", c.fp},
                   {"fn", c.fn},
                   {"sensitivity", sensitivity(c)},
                   {"specificity", specificity(c)}});
  }
  doc["per_class"] = per;
  json pts = json::array();
  for (const auto& p : ev.roc.points) {
    pts.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", std::isinf(p.threshold) ? json("inf") : json(p.threshold)}});
  }
  doc["roc"] = pts;
  doc.update(json::parse(extra_json));
  return doc.dump(2) + "\n";
}

std::string train_report_csv(const TrainReport& report) {
  std::string out = "epoch,train_loss,train_accuracy,test_loss,test_accuracy\n";
  char buf[160];
  std::snprintf(buf, sizeof buf, "0,%.17g,,,\n", report.initial_loss);
  out += buf;
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.train_accuracy,
                  e.test_loss, e.test_accuracy);
    out += buf;
  }
  return out;
}

std::string scores_csv(std::span<const double> scores) {
  std::string out = "score\n";
  char buf[40];
  for (double s : scores) {
    std::snprintf(buf, sizeof buf, "%.17g\n", s);
    out += buf;
  }
  return out;
}

std::vector<double> load_scores(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<double> out;
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string row = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line;
    while (!row.empty() && (row.back() == '\r' || row.back() == ' ')) row.pop_back();
    if (row.empty() || (line == 1 && row == "score")) continue;
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(row, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != row.size() || !std::isfinite(v)) throw ParseError(path.string(), line, 1, "bad score '" + row + "'");
    out.push_back(v);
  }
  if (out.empty()) throw ParseError(path.string(), 0, 0, "no scores");
  return out;
}

namespace {

class StageLog {
 public:
  StageLog(const fs::path& file, const Logger& sink) : out_(file, std::ios::trunc), sink_(sink) {}

  void line(const std::string& msg) {
    out_ << msg << '\n';
    out_.flush();
    if (sink_) sink_(msg);
  }

  template <typename F>
  auto stage(const std::string& name, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    line("[" + name + "] start");
    auto finish = [&] {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.2f s", s);
      line("[" + name + "] done in " + buf);
    };
    try {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        finish();
      } else {
        auto r = f();
        finish();
        return r;
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      line("[" + name + "] failed: " + e.what());
      throw StageError(name, e.what());
    }
  }

 private:
  std::ofstream out_;
  const Logger& sink_;
};

Dataset subset(const Dataset& full, std::span<const std::size_t> idx, std::size_t num_classes) {
  Dataset d;
  d.image_size = full.image_size;
  d.steps = full.steps;
  d.num_classes = num_classes;
  for (std::size_t i : idx) d.samples.push_back(full.samples[i]);
  return d;
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& run_dir, const Logger& sink) {
  cfg.validate();
  fs::create_directories(run_dir);
  StageLog log(run_dir / "run.log", sink);
  log.line("seeds: data " + std::to_string(cfg.data.seed) + ", train " + std::to_string(cfg.train.seed));
  write_file_atomic(run_dir / "config.ini", cfg.to_ini());

  const fs::path data_dir = run_dir / "data";
  log.stage("gen-data", [&] { generate_corpus(cfg.data, data_dir); });
  const DatasetManifest manifest = log.stage("load", [&] { return load_manifest(data_dir / "manifest.json"); });
  const std::vector<TimeSeries> recordings = load_recordings(data_dir / "manifest.json", manifest);
  log.stage("preprocess", [&] {
    for (const auto& rec : recordings) {
      save_recording(run_dir / "preprocessed" / (rec.subject_id() + ".csv"), preprocess(rec, cfg.preprocess));
    }
  });
  std::vector<int> rec_labels;
  for (const auto& e : manifest.entries) rec_labels.push_back(e.label);
  const fs::path archive_dir = run_dir / "archive";
  log.stage("scalogram", [&] { build_archive(recordings, rec_labels, cfg, archive_dir); });
  const ArchiveDataset all = log.stage("load-archive", [&] { return load_archive_dataset(archive_dir); });

  // Enrolled subjects vs never-seen impostor subjects.
  std::size_t classes = all.data.num_classes;
  if (cfg.auth.impostor_mode == ImpostorMode::subjects) classes -= cfg.auth.impostor_subjects;
  std::vector<std::size_t> enrolled_idx, held_idx;
  for (std::size_t i = 0; i < all.data.samples.size(); ++i) {
    (static_cast<std::size_t>(all.data.samples[i].label) < classes ? enrolled_idx : held_idx).push_back(i);
  }
  const Dataset data = subset(all.data, enrolled_idx, classes);
  const std::vector<std::string> class_ids(all.class_ids.begin(), all.class_ids.begin() + static_cast<long>(classes));

  const auto labels = data.labels();
  const Split split = stratified_split(labels, cfg.train.train_fraction, cfg.train.seed);
  write_file_atomic(run_dir / "split.json",
                    json{{"train", split.train}, {"test", split.test}, {"num_classes", classes}}.dump() + "\n");

  PipelineResult result;
  result.num_classes = classes;
  result.train_examples = split.train.size();
  result.test_examples = split.test.size();

  HybridModel<float> model(cfg.model_for(classes), cfg.train.seed);
  auto epoch_logger = [&](const std::string& tag) {
    return [&log, tag](const EpochMetrics& m) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "[%s] epoch %zu loss %.4f train_acc %.3f test_acc %.3f", tag.c_str(), m.epoch,
                    m.train_loss, m.train_accuracy, m.test_accuracy);
      log.line(buf);
    };
  };
  result.report = log.stage("train", [&] { return train(model, data, split, cfg.train, epoch_logger("train")); });
  write_file_atomic(run_dir / "train_metrics.csv", train_report_csv(result.report));
  save_checkpoint(run_dir / "checkpoint.bin", model, cfg.train.seed, class_ids);

  const auto gallery = log.stage("enroll", [&] {
    const Evaluation tr = evaluate(model, data, split.train);
    std::vector<int> tl;
    for (std::size_t i : split.train) tl.push_back(labels[i]);
    auto g = enroll_gallery(tr.embeddings, tl, class_ids);
    save_gallery(run_dir / "gallery.json", g);
    return g;
  });

  result.evaluation = log.stage("evaluate", [&] {
    const Evaluation te = evaluate(model, data, split.test);
    std::vector<int> tl;
    for (std::size_t i : split.test) tl.push_back(labels[i]);
    std::optional<std::vector<std::vector<double>>> held;
    if (!held_idx.empty()) {
      // Labels of never-enrolled subjects are outside the class range; only
      // their embeddings are used.
      Dataset h = subset(all.data, held_idx, classes);
      for (auto& s : h.samples) s.label = 0;
      held = evaluate(model, h, iota_indices(h.samples.size())).embeddings;
    }
    return evaluate_authentication(te, tl, gallery, classes, cfg.auth.threshold, held ? &*held : nullptr);
  });

  write_file_atomic(run_dir / "genuine_scores.csv", scores_csv(result.evaluation.scores.genuine));
  write_file_atomic(run_dir / "impostor_scores.csv", scores_csv(result.evaluation.scores.impostor));

  if (cfg.ablation) {
    result.lstm_only_accuracy = log.stage("ablation", [&] {
      ModelConfig m = cfg.model_for(classes);
      m.branches = {false, false, true};
      HybridModel<float> lstm_only(m, cfg.train.seed);
      const TrainReport rep = train(lstm_only, data, split, cfg.train, epoch_logger("ablation"));
      write_file_atomic(run_dir / "ablation_train_metrics.csv", train_report_csv(rep));
      return evaluate(lstm_only, data, split.test).accuracy;
    });
  }

  auto rows = metrics_rows(result.evaluation);
  json extra;
  extra["num_classes"] = classes;
  extra["train_examples"] = result.train_examples;
  extra["test_examples"] = result.test_examples;
  extra["initial_loss"] = result.report.initial_loss;
  extra["final_train_loss"] = result.report.epochs.empty() ? result.report.initial_loss
                                                            : result.report.epochs.back().train_loss;
  extra["epochs_run"] = result.report.epochs.size();
  extra["impostor_mode"] = cfg.auth.impostor_mode == ImpostorMode::subjects ? "subjects" : "segments";
  if (result.lstm_only_accuracy) {
    rows.emplace_back("lstm_only_accuracy", *result.lstm_only_accuracy);
    extra["ablation"] = {{"full_test_accuracy", result.evaluation.classifier.accuracy},
                         {"lstm_only_test_accuracy", *result.lstm_only_accuracy}};
  }
  write_file_atomic(run_dir / "metrics.csv", metrics_csv(rows));
  write_file_atomic(run_dir / "metrics.json", metrics_json(result.evaluation, class_ids, extra.dump()));
  log.line("closed-set accuracy " + std::to_string(result.evaluation.classifier.accuracy) + ", AUC " +
           std::to_string(result.evaluation.auc) + ", EER " + std::to_string(result.evaluation.eer.eer));
  return result;
}

}  // namespace ppgauth
