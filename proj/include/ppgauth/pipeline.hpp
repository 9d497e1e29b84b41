#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppgauth/archive.hpp"
#include "ppgauth/auth.hpp"
#include "ppgauth/config.hpp"
#include "ppgauth/metrics.hpp"
#include "ppgauth/train.hpp"

namespace ppgauth {

using Logger = std::function<void(const std::string&)>;

// Preprocess a raw recording and cut it into analysis windows.
std::vector<Segment> prepare_segments(const TimeSeries& raw, const RunConfig& cfg);

// Scalogram + raw segment files for every segment of every recording, plus
// index.json. labels[i] and recordings[i] belong together.
ArchiveIndex build_archive(const std::vector<TimeSeries>& recordings, std::span<const int> labels,
                           const RunConfig& cfg, const std::filesystem::path& dir);

struct ArchiveDataset {
  Dataset data;
  ArchiveIndex index;
  std::vector<std::string> class_ids;  // subject id per label
};

// Loads an archive into memory. Every entry needs a segment file.
ArchiveDataset load_archive_dataset(const std::filesystem::path& dir);

// One template per label from the given embeddings.
std::vector<SubjectTemplate> enroll_gallery(const std::vector<std::vector<double>>& embeddings,
                                            std::span<const int> labels, const std::vector<std::string>& class_ids);

struct ScoreSets {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

// Each query against every template: its own subject's score is genuine,
// the rest are impostor scores.
ScoreSets score_queries(const std::vector<std::vector<double>>& embeddings, std::span<const int> labels,
                        const std::vector<SubjectTemplate>& gallery);

struct AuthEvaluation {
  ClassificationReport classifier;  // argmax of the class probabilities
  double template_accuracy = 0.0;   // argmax cosine against the gallery
  ScoreSets scores;
  RocCurve roc;
  double auc = 0.0;
  ThresholdCalibration eer;
  double threshold = 0.0;             // operating threshold
  double verification_accuracy = 0.0; // open-set decisions at threshold
};

// held_out: optional embeddings of never-enrolled subjects whose scores
// replace the within-gallery impostor scores.
AuthEvaluation evaluate_authentication(const Evaluation& test, std::span<const int> test_labels,
                                       const std::vector<SubjectTemplate>& gallery, std::size_t num_classes,
                                       std::optional<double> threshold,
                                       const std::vector<std::vector<double>>* held_out = nullptr);

// JSON metrics document (per-class table, ROC points, AUC, EER, threshold).
std::string metrics_json(const AuthEvaluation& ev, const std::vector<std::string>& class_ids,
                         const std::string& extra_json = "{}");
std::vector<std::pair<std::string, double>> metrics_rows(const AuthEvaluation& ev);

struct PipelineResult {
  std::size_t num_classes = 0;
  std::size_t train_examples = 0;
  std::size_t test_examples = 0;
  TrainReport report;
  AuthEvaluation evaluation;
  std::optional<double> lstm_only_accuracy;
};

// Generates the synthetic corpus and runs every stage into run_dir:
//   config.ini, data/, preprocessed/, archive/, split.json, checkpoint.bin,
//   train_metrics.csv, gallery.json, genuine_scores.csv, impostor_scores.csv,
//   metrics.csv, metrics.json, ablation_train_metrics.csv,
//   run.log (stage timings; the only file that varies between reruns).
PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& run_dir, const Logger& log = {});

std::string train_report_csv(const TrainReport& report);

// Score list files: optional "score" header, one value per line.
std::string scores_csv(std::span<const double> scores);
std::vector<double> load_scores(const std::filesystem::path& path);

}  // namespace ppgauth
