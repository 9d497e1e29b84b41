#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ppgauth {

struct SubjectTemplate {
  std::string subject_id;
  std::vector<double> vector;  // mean enrollment embedding
  std::size_t n_enrolled = 0;
};

// Element-wise mean of the embeddings. Throws InvalidArgument on an empty
// list, ragged widths, non-finite values or a zero-norm mean.
SubjectTemplate enroll(const std::vector<std::vector<double>>& embeddings, std::string subject_id);

// Cosine similarity; throws InvalidArgument on a zero-norm operand or width
// mismatch.
double cosine_similarity(std::span<const double> a, std::span<const double> b);
double similarity(std::span<const double> query, const SubjectTemplate& tmpl);

struct AuthDecision {
  std::size_t best_index = 0;              // argmax over the gallery
  std::optional<std::string> subject_id;   // set only when accepted
  double score = 0.0;                      // similarity to best_index
  double threshold = 0.0;
  bool accepted = false;                   // score >= threshold
};

// Open-set decision: argmax similarity (ties to the lowest index), accepted
// iff the best score reaches tau.
AuthDecision identify(std::span<const double> query, const std::vector<SubjectTemplate>& gallery, double tau);

// Closed-set decision: argmax similarity only.
std::size_t closest_template(std::span<const double> query, const std::vector<SubjectTemplate>& gallery);

// Fraction of impostor scores >= tau.
double false_accept_rate(std::span<const double> impostor, double tau);
// Fraction of genuine scores < tau.
double false_reject_rate(std::span<const double> genuine, double tau);

struct ThresholdCalibration {
  double threshold = 0.0;
  double eer = 0.0;  // (FAR + FRR) / 2 at threshold
  double far = 0.0;
  double frr = 0.0;
};

// Candidate thresholds: midpoints between consecutive sorted unique scores,
// the smallest score, and the next double above the largest. Picks the
// smallest |FAR - FRR|; ties go to the lowest threshold.
std::vector<double> threshold_candidates(std::span<const double> genuine, std::span<const double> impostor);
ThresholdCalibration calibrate_threshold(std::span<const double> genuine, std::span<const double> impostor);

// Gallery file: {"version": 1, "templates": [{subject_id, n_enrolled, vector}]}.
void save_gallery(const std::filesystem::path& path, const std::vector<SubjectTemplate>& gallery);
std::vector<SubjectTemplate> load_gallery(const std::filesystem::path& path);

}  // namespace ppgauth
