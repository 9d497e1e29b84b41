#include "ppgauth/auth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"

namespace ppgauth {

using json = nlohmann::json;

SubjectTemplate enroll(const std::vector<std::vector<double>>& embeddings, std::string subject_id) {
  if (embeddings.empty()) throw InvalidArgument("enroll: no embeddings for '" + subject_id + "'");
  const std::size_t d = embeddings.front().size();
  if (d == 0) throw InvalidArgument("enroll: empty embedding");
  std::vector<double> mean(d, 0.0);
  for (const auto& e : embeddings) {
    if (e.size() != d) throw InvalidArgument("enroll: embeddings have different widths");
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(e[j])) throw InvalidArgument("enroll: non-finite embedding value");
      mean[j] += e[j];
    }
  }
  const double n = static_cast<double>(embeddings.size());
  double norm2 = 0.0;
  for (double& v : mean) {
    v /= n;
    norm2 += v * v;
  }
  if (!(norm2 > 0.0)) throw InvalidArgument("enroll: template for '" + subject_id + "' has zero norm");
  return {std::move(subject_id), std::move(mean), embeddings.size()};
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine_similarity: width mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!(na > 0.0) || !(nb > 0.0)) throw InvalidArgument("cosine_similarity: zero-norm vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double similarity(std::span<const double> query, const SubjectTemplate& tmpl) {
  return cosine_similarity(query, tmpl.vector);
}

AuthDecision identify(std::span<const double> query, const std::vector<SubjectTemplate>& gallery, double tau) {
  if (gallery.empty()) throw InvalidArgument("identify: empty gallery");
  AuthDecision d;
  d.threshold = tau;
  d.score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const double s = similarity(query, gallery[i]);
    if (s > d.score) {
      d.score = s;
      d.best_index = i;
    }
  }
  d.accepted = d.score >= tau;
  if (d.accepted) d.subject_id = gallery[d.best_index].subject_id;
  return d;
}

std::size_t closest_template(std::span<const double> query, const std::vector<SubjectTemplate>& gallery) {
  return identify(query, gallery, -std::numeric_limits<double>::infinity()).best_index;
}

double false_accept_rate(std::span<const double> impostor, double tau) {
  if (impostor.empty()) throw InvalidArgument("false_accept_rate: no impostor scores");
  const auto n = std::count_if(impostor.begin(), impostor.end(), [tau](double s) { return s >= tau; });
  return static_cast<double>(n) / static_cast<double>(impostor.size());
}

double false_reject_rate(std::span<const double> genuine, double tau) {
  if (genuine.empty()) throw InvalidArgument("false_reject_rate: no genuine scores");
  const auto n = std::count_if(genuine.begin(), genuine.end(), [tau](double s) { return s < tau; });
  return static_cast<double>(n) / static_cast<double>(genuine.size());
}

std::vector<double> threshold_candidates(std::span<const double> genuine, std::span<const double> impostor) {
  if (genuine.empty() || impostor.empty()) throw InvalidArgument("threshold_candidates: empty score list");
  std::vector<double> all(genuine.begin(), genuine.end());
  all.insert(all.end(), impostor.begin(), impostor.end());
  for (double s : all) {
    if (!std::isfinite(s)) throw InvalidArgument("threshold_candidates: non-finite score");
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  std::vector<double> out;
  out.reserve(all.size() + 1);
  out.push_back(all.front());
  for (std::size_t i = 1; i < all.size(); ++i) out.push_back(all[i - 1] + (all[i] - all[i - 1]) / 2.0);
  out.push_back(std::nextafter(all.back(), std::numeric_limits<double>::infinity()));
  return out;
}

ThresholdCalibration calibrate_threshold(std::span<const double> genuine, std::span<const double> impostor) {
  const auto candidates = threshold_candidates(genuine, impostor);
  std::vector<double> g(genuine.begin(), genuine.end()), im(impostor.begin(), impostor.end());
  std::sort(g.begin(), g.end());
  std::sort(im.begin(), im.end());
  const double ng = static_cast<double>(g.size()), ni = static_cast<double>(im.size());
  ThresholdCalibration best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (double tau : candidates) {
    // Sorted lists give the counts by binary search.
    const double far = static_cast<double>(im.end() - std::lower_bound(im.begin(), im.end(), tau)) / ni;
    const double frr = static_cast<double>(std::lower_bound(g.begin(), g.end(), tau) - g.begin()) / ng;
    const double gap = std::abs(far - frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {tau, (far + frr) / 2.0, far, frr};
    }
  }
  return best;
}

void save_gallery(const std::filesystem::path& path, const std::vector<SubjectTemplate>& gallery) {
  json doc;
  doc["version"] = 1;
  doc["templates"] = json::array();
  for (const auto& t : gallery) {
    doc["templates"].push_back({{"subject_id", t.subject_id}, {"n_enrolled", t.n_enrolled}, {"vector", t.vector}});
  }
  write_file_atomic(path, doc.dump(2) + "\n");
}

std::vector<SubjectTemplate> load_gallery(const std::filesystem::path& path) {
  std::vector<SubjectTemplate> out;
  try {
    const json doc = json::parse(read_file(path));
    if (doc.at("version").get<int>() != 1) throw ParseError(path.string(), 0, 0, "unsupported gallery version");
    for (const auto& jt : doc.at("templates")) {
      SubjectTemplate t;
      t.subject_id = jt.at("subject_id").get<std::string>();
      t.n_enrolled = jt.at("n_enrolled").get<std::size_t>();
      t.vector = jt.at("vector").get<std::vector<double>>();
      out.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string(), 0, 0, std::string("bad gallery: ") + e.what());
  }
  if (out.empty()) throw ParseError(path.string(), 0, 0, "gallery has no templates");
  for (const auto& t : out) {
    if (t.n_enrolled == 0 || t.vector.size() != out.front().vector.size()) {
      throw ParseError(path.string(), 0, 0, "template '" + t.subject_id + "' is inconsistent");
    }
  }
  return out;
}

}  // namespace ppgauth
