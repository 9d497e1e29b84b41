#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ppgauth/auth.hpp"
#include "ppgauth/config.hpp"
#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"
#include "ppgauth/metrics.hpp"
#include "ppgauth/pipeline.hpp"
#include "ppgauth/signal_prep.hpp"
#include "ppgauth/timefreq.hpp"

namespace py = pybind11;
using namespace ppgauth;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const DArray& a) {
  if (a.ndim() != 1) throw InvalidArgument("expected a one-dimensional array");
  return {a.data(), a.data() + a.size()};
}

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

PreprocessConfig preprocess_config(double band_low, double band_high, double clip_sigma, int resample_factor,
                                   int filter_order, std::optional<int> smoothing_window) {
  PreprocessConfig c;
  c.band_low_hz = band_low;
  c.band_high_hz = band_high;
  c.clip_sigma = clip_sigma;
  c.resample_factor = resample_factor;
  c.filter_order = filter_order;
  c.smoothing_window = smoothing_window;
  return c;
}

std::vector<SubjectTemplate> to_gallery(const std::vector<std::pair<std::string, std::vector<double>>>& items) {
  std::vector<SubjectTemplate> g;
  for (const auto& [id, v] : items) g.push_back({id, v, 1});
  return g;
}

py::dict decision_dict(const AuthDecision& d) {
  py::dict out;
  out["best_index"] = d.best_index;
  out["score"] = d.score;
  out["threshold"] = d.threshold;
  out["accepted"] = d.accepted;
  out["subject_id"] = d.subject_id ? py::object(py::str(*d.subject_id)) : py::object(py::none());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "PPG biometric authentication core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  const py::tuple both = py::make_tuple(base, py::handle(PyExc_ValueError));
  py::register_exception<InvalidArgument>(m, "InvalidArgument", both);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<UndefinedMetric>(m, "UndefinedMetric", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<StageError>(m, "StageError", base.ptr());

  // --- signal preparation
  m.def(
      "preprocess",
      [](const DArray& x, double fs, double band_low, double band_high, double clip_sigma, int resample_factor,
         int filter_order, std::optional<int> smoothing_window) {
        const auto cfg = preprocess_config(band_low, band_high, clip_sigma, resample_factor, filter_order,
                                           smoothing_window);
        const auto y = preprocess(TimeSeries(to_vec(x), fs), cfg);
        return py::make_tuple(to_array(y.samples()), y.sample_rate_hz());
      },
      py::arg("x"), py::arg("fs"), py::arg("band_low") = 0.7, py::arg("band_high") = 4.0, py::arg("clip_sigma") = 3.0,
      py::arg("resample_factor") = 5, py::arg("filter_order") = 4, py::arg("smoothing_window") = py::none(),
      "Full preprocessing chain. Returns (samples, sample_rate_hz).");
  m.def(
      "preprocess_stages",
      [](const DArray& x, double fs) {
        py::list out;
        for (const auto& st : preprocess_stages(TimeSeries(to_vec(x), fs), PreprocessConfig{})) {
          out.append(py::make_tuple(st.name, to_array(st.signal.samples()), st.signal.sample_rate_hz()));
        }
        return out;
      },
      py::arg("x"), py::arg("fs"), "Every intermediate stage as (name, samples, sample_rate_hz).");
  m.def(
      "detrend", [](const DArray& x, double fs) { return to_array(detrend(TimeSeries(to_vec(x), fs)).samples()); },
      py::arg("x"), py::arg("fs") = 1.0);
  m.def(
      "resample",
      [](const DArray& x, double fs, int factor) {
        return to_array(resample_fourier(TimeSeries(to_vec(x), fs), factor).samples());
      },
      py::arg("x"), py::arg("fs"), py::arg("factor"));
  m.def(
      "normalize", [](const DArray& x) { return to_array(normalize_minmax(TimeSeries(to_vec(x), 1.0)).samples()); },
      py::arg("x"));

  // --- segmentation and scalograms
  m.def("segment_count", &segment_count, py::arg("length"), py::arg("window"), py::arg("hop"));
  m.def(
      "segment",
      [](const DArray& x, double fs, double window_seconds, double overlap) {
        SegmentationConfig cfg;
        cfg.window_seconds = window_seconds;
        cfg.overlap_ratio = overlap;
        py::list out;
        for (const auto& s : segment(TimeSeries(to_vec(x), fs), cfg)) out.append(to_array(s.samples));
        return out;
      },
      py::arg("x"), py::arg("fs"), py::arg("window_seconds") = 5.0, py::arg("overlap") = 0.5);
  m.def(
      "scalogram",
      [](const DArray& x, double fs, std::size_t height, std::size_t width, double freq_min, double freq_max,
         std::size_t n_scales) {
        WaveletConfig cfg;
        cfg.freq_min_hz = freq_min;
        cfg.freq_max_hz = freq_max;
        cfg.n_scales = n_scales;
        Segment seg;
        seg.samples = to_vec(x);
        seg.sample_rate_hz = fs;
        const auto img = scalogram(seg, cfg, height, width);
        py::array_t<float> pixels({img.height, img.width});
        std::copy(img.pixels.begin(), img.pixels.end(), pixels.mutable_data());
        return py::make_tuple(pixels, to_array(img.freq_axis_hz), to_array(img.time_axis_s));
      },
      py::arg("x"), py::arg("fs"), py::arg("height") = 256, py::arg("width") = 256, py::arg("freq_min") = 0.3,
      py::arg("freq_max") = 4.0, py::arg("n_scales") = 64,
      "Morlet scalogram in [0, 1]. Returns (image, freq_axis_hz, time_axis_s); row 0 is the highest frequency.");

  // --- synthetic data
  m.def(
      "generate_subject",
      [](double heart_rate_hz, double duration_s, double fs, std::uint64_t seed, double noise_sigma) {
        SyntheticSubjectSpec s;
        s.heart_rate_hz = heart_rate_hz;
        s.seed = seed;
        s.noise_sigma = noise_sigma;
        return to_array(generate_subject(s, duration_s, fs).samples());
      },
      py::arg("heart_rate_hz") = 1.2, py::arg("duration_s") = 70.0, py::arg("fs") = 14.0, py::arg("seed") = 0,
      py::arg("noise_sigma") = 0.05);

  // --- authentication
  m.def(
      "cosine_similarity", [](const DArray& a, const DArray& b) { return cosine_similarity(to_vec(a), to_vec(b)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "enroll",
      [](const std::vector<std::vector<double>>& embeddings) { return to_array(enroll(embeddings, "").vector); },
      py::arg("embeddings"), "Template vector: the mean of the embeddings.");
  m.def(
      "identify",
      [](const DArray& query, const std::vector<std::pair<std::string, std::vector<double>>>& gallery, double tau) {
        return decision_dict(identify(to_vec(query), to_gallery(gallery), tau));
      },
      py::arg("query"), py::arg("gallery"), py::arg("threshold"),
      "gallery is a list of (subject_id, template) pairs.");
  m.def(
      "calibrate_threshold",
      [](const DArray& genuine, const DArray& impostor) {
        const auto c = calibrate_threshold(to_vec(genuine), to_vec(impostor));
        py::dict out;
        out["threshold"] = c.threshold;
        out["eer"] = c.eer;
        out["far"] = c.far;
        out["frr"] = c.frr;
        return out;
      },
      py::arg("genuine"), py::arg("impostor"));
  m.def(
      "false_accept_rate", [](const DArray& impostor, double tau) { return false_accept_rate(to_vec(impostor), tau); },
      py::arg("impostor"), py::arg("threshold"));
  m.def(
      "false_reject_rate", [](const DArray& genuine, double tau) { return false_reject_rate(to_vec(genuine), tau); },
      py::arg("genuine"), py::arg("threshold"));

  // --- metrics
  m.def(
      "roc",
      [](const DArray& genuine, const DArray& impostor) {
        const auto c = roc(to_vec(genuine), to_vec(impostor));
        std::vector<double> f, t, th;
        for (const auto& p : c.points) {
          f.push_back(p.fpr);
          t.push_back(p.tpr);
          th.push_back(p.threshold);
        }
        return py::make_tuple(to_array(f), to_array(t), to_array(th));
      },
      py::arg("genuine"), py::arg("impostor"), "Returns (fpr, tpr, thresholds).");
  m.def(
      "auc", [](const DArray& genuine, const DArray& impostor) { return auc(roc(to_vec(genuine), to_vec(impostor))); },
      py::arg("genuine"), py::arg("impostor"));
  m.def(
      "confusion_metrics",
      [](std::uint64_t tp, std::uint64_t tn, std::uint64_t fp, std::uint64_t fn) {
        const ConfusionCounts c{tp, tn, fp, fn};
        py::dict out;
        out["accuracy"] = accuracy(c);
        out["sensitivity"] = sensitivity(c);
        out["specificity"] = specificity(c);
        return out;
      },
      py::arg("tp"), py::arg("tn"), py::arg("fp"), py::arg("fn"));
  m.def(
      "classification_report",
      [](const std::vector<int>& truth, const std::vector<int>& pred, std::size_t num_classes) {
        const auto r = classification_report(truth, pred, num_classes);
        py::dict out;
        out["accuracy"] = r.accuracy;
        out["macro_sensitivity"] = r.macro_sensitivity;
        out["macro_specificity"] = r.macro_specificity;
        out["confusion"] = r.confusion;
        return out;
      },
      py::arg("truth"), py::arg("predicted"), py::arg("num_classes"));

  // --- end to end
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& run_dir, std::size_t subjects, std::uint64_t seed, std::size_t epochs,
         std::size_t input_size, bool ablation) {
        RunConfig cfg;
        cfg.data.subjects = subjects;
        cfg.data.seed = seed;
        cfg.train.epochs = epochs;
        cfg.model.input_size = input_size;
        cfg.ablation = ablation;
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run_pipeline(cfg, run_dir);
        }
        py::dict out;
        out["num_classes"] = r.num_classes;
        out["train_examples"] = r.train_examples;
        out["test_examples"] = r.test_examples;
        out["accuracy"] = r.evaluation.classifier.accuracy;
        out["auc"] = r.evaluation.auc;
        out["eer"] = r.evaluation.eer.eer;
        out["threshold"] = r.evaluation.eer.threshold;
        out["lstm_only_accuracy"] = r.lstm_only_accuracy ? py::object(py::float_(*r.lstm_only_accuracy))
                                                         : py::object(py::none());
        return out;
      },
      py::arg("run_dir"), py::arg("subjects") = 8, py::arg("seed") = 7, py::arg("epochs") = 12,
      py::arg("input_size") = 256, py::arg("ablation") = true,
      "Generate data, train, enroll and evaluate into run_dir. Returns headline metrics.");
}
