#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <numbers>

#include "ppgauth/archive.hpp"
#include "ppgauth/checkpoint.hpp"
#include "ppgauth/config.hpp"
#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"
#include "test_util.hpp"

using namespace ppgauth;
namespace fs = std::filesystem;

namespace {

SyntheticSubjectSpec clean_spec(double hr) {
  SyntheticSubjectSpec s;
  s.subject_id = "clean";
  s.heart_rate_hz = hr;
  s.noise_sigma = 0;
  s.artifact_rate_per_min = 0;
  s.drift_amplitude = 0;
  return s;
}

std::vector<double> power_spectrum(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> p(n / 2 + 1);
  for (std::size_t k = 0; k < p.size(); ++k) {
    std::complex<double> acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i % n) / static_cast<double>(n));
    }
    p[k] = std::norm(acc);
  }
  return p;
}

}  // namespace

TEST_CASE("generator length and determinism", "[data_io]") {
  SyntheticSubjectSpec s;
  s.seed = 12;
  const auto a = generate_subject(s, 70.0, 14.0);
  CHECK(a.size() == 980);
  CHECK(a.sample_rate_hz() == 14.0);
  CHECK(generate_subject(s, 70.0, 14.0).samples() == a.samples());
  s.seed = 13;
  CHECK(generate_subject(s, 70.0, 14.0).samples() != a.samples());
}

TEST_CASE("noise-free signal peaks at the heart-rate bin", "[data_io]") {
  const auto spec = clean_spec(1.2);  // 84 cycles in 70 s
  const auto x = generate_subject(spec, 70.0, 14.0).samples();
  CHECK(x == clean_waveform(spec, 70.0, 14.0));
  CHECK(testutil::dft_peak_bin(x) == 84);

  // Nearly all energy sits on multiples of the fundamental.
  const auto p = power_spectrum(x);
  double total = 0, harmonic = 0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    total += p[k];
    if (k % 84 == 0) harmonic += p[k];
  }
  CHECK(harmonic / total >= 0.99);
}

TEST_CASE("spectral content of the noise-free waveform", "[data_io]") {
  auto spec = clean_spec(1.0);
  spec.harmonic_amplitudes = {1.0, 0.5, 0.25, 0.1};
  spec.harmonic_phases = {0, 0, 0, 0};
  spec.dicrotic_amplitude = 0;
  const auto x = clean_waveform(spec, 20.0, 14.0);
  // Harmonics at 1..4 Hz; 20 s gives bins 20, 40, 60, 80 with amplitude a * n / 2.
  const auto p = power_spectrum(x);
  for (std::size_t k = 1; k <= 4; ++k) {
    CHECK_THAT(std::sqrt(p[20 * k]), Catch::Matchers::WithinRel(spec.harmonic_amplitudes[k - 1] * 140.0, 1e-9));
  }
}

TEST_CASE("spec validation", "[data_io]") {
  auto s = clean_spec(2.5);
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = clean_spec(1.0);
  s.harmonic_amplitudes = {1.0, 0.5};
  s.harmonic_phases = {0, 0};
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
  s = clean_spec(1.0);
  s.noise_sigma = -1;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
}

TEST_CASE("corpus heart rates are spread apart", "[data_io]") {
  CorpusConfig cfg;
  std::vector<double> hr;
  for (std::size_t i = 0; i < 8; ++i) hr.push_back(corpus_subject_spec(cfg, i).heart_rate_hz);
  for (std::size_t i = 0; i < hr.size(); ++i)
    for (std::size_t j = i + 1; j < hr.size(); ++j) CHECK(std::abs(hr[i] - hr[j]) >= 0.1);
  // Snapped to the recording's frequency grid.
  for (double h : hr) CHECK(std::abs(h * 70.0 - std::round(h * 70.0)) < 1e-9);

  cfg.subjects = 46;
  for (std::size_t i = 0; i < 46; ++i) CHECK(generate_subject(corpus_subject_spec(cfg, i), 70, 14).size() == 980);
  cfg.subjects = 200;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("corpus files and manifest", "[data_io]") {
  testutil::TempDir dir("corpus");
  CorpusConfig cfg;
  cfg.subjects = 3;
  const auto m = generate_corpus(cfg, dir.path());
  REQUIRE(m.entries.size() == 3);
  CHECK(m.num_classes() == 3);
  const auto loaded = load_manifest(dir / "manifest.json");
  const auto recs = load_recordings(dir / "manifest.json", loaded);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.entries[i].label == static_cast<int>(i));
    CHECK(loaded.entries[i].origin == Origin::synthetic);
    CHECK(recs[i].samples() == generate_subject(corpus_subject_spec(cfg, i), 70, 14).samples());
  }
}

TEST_CASE("recording round-trip is bit-identical", "[data_io]") {
  testutil::TempDir dir("roundtrip");
  SyntheticSubjectSpec s;
  s.subject_id = "rt";
  const auto a = generate_subject(s, 70.0, 14.0);
  save_recording(dir / "rt.csv", a);
  const auto b = load_recording(dir / "rt.csv");
  CHECK(b.samples() == a.samples());
  CHECK(b.sample_rate_hz() == 14.0);
  CHECK(b.subject_id() == "rt");
}

TEST_CASE("a NaN row is a parse error naming its line", "[data_io]") {
  testutil::TempDir dir("nan");
  write_file_atomic(dir / "bad.csv", "s1,14\n0.1\n0.2\nnan\n0.4\n");
  try {
    load_recording(dir / "bad.csv");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }
  write_file_atomic(dir / "bad2.csv", "s1,14\n0.1\nabc\n");
  CHECK_THROWS_AS(load_recording(dir / "bad2.csv"), ParseError);
  write_file_atomic(dir / "bad3.csv", "s1\n0.1\n");
  CHECK_THROWS_AS(load_recording(dir / "bad3.csv"), ParseError);
}

TEST_CASE("a manifest with a missing file fails as a whole", "[data_io]") {
  testutil::TempDir dir("missing");
  CorpusConfig cfg;
  cfg.subjects = 3;
  generate_corpus(cfg, dir.path());
  fs::remove(dir / "subject_01.csv");
  std::optional<DatasetManifest> m;
  CHECK_THROWS(m = load_manifest(dir / "manifest.json"));
  CHECK_FALSE(m.has_value());
}

TEST_CASE("manifest schema checks", "[data_io]") {
  testutil::TempDir dir("schema");
  write_file_atomic(dir / "a.json", "{\"version\": 2, \"entries\": []}");
  CHECK_THROWS_AS(load_manifest(dir / "a.json"), ParseError);
  write_file_atomic(dir / "b.json", "{\"version\": 1, \"entries\": [{\"path\": 3}]}");
  CHECK_THROWS_AS(load_manifest(dir / "b.json"), ParseError);
  write_file_atomic(dir / "c.json", "not json");
  CHECK_THROWS_AS(load_manifest(dir / "c.json"), ParseError);
}

TEST_CASE("float matrices and archive index round-trip", "[data_io]") {
  testutil::TempDir dir("archive");
  const std::vector<float> v = {1.5f, -2.0f, 3.25f, 0.0f, 1e-30f, 7.0f};
  write_matrix(dir / "m.bin", 2, 3, v);
  const auto m = read_matrix(dir / "m.bin");
  CHECK(m.height == 2);
  CHECK(m.width == 3);
  CHECK(m.data == v);
  CHECK(fs::file_size(dir / "m.bin") == 8 + 6 * 4);
  write_file_atomic(dir / "short.bin", std::string("\x02\x00\x00\x00\x03\x00\x00\x00\x00", 9));
  CHECK_THROWS(read_matrix(dir / "short.bin"));

  ArchiveIndex idx;
  idx.entries.push_back({"scal_00000.bin", "seg_00000.bin", "a", 0, 0, 0, false, 70.0});
  idx.entries.push_back({"scal_00001.bin", "seg_00001.bin", "b", 1, 3, 525, true, 70.0});
  save_archive_index(dir.path(), idx);
  const auto back = load_archive_index(dir.path());
  REQUIRE(back.entries.size() == 2);
  CHECK(back.num_classes() == 2);
  CHECK(back.entries[1].subject_id == "b");
  CHECK(back.entries[1].segment_index == 3);
  CHECK(back.entries[1].start_index == 525);
  CHECK(back.entries[1].padded);
  CHECK(back.entries[1].segment_file == "seg_00001.bin");
}

TEST_CASE("checkpoints restore the exact model", "[data_io]") {
  auto cfg = ModelConfig::miniature(3);
  HybridModel<float> model(cfg, 21);
  // Non-default running statistics so they are part of the round trip.
  model.set_training(true);
  ag::Tensor<float> img(ag::Shape{2, 32, 32, 1}, 0.25f), seq(ag::Shape{2, 20}, 0.5f);
  img.values()[5] = 0.9f;
  model.forward(img, seq);
  model.set_training(false);

  const std::string bytes = serialize_checkpoint(model, 21, {"a", "b", "c"});
  const Checkpoint ck = deserialize_checkpoint(bytes);
  CHECK(ck.seed == 21);
  CHECK(ck.class_ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(ck.model.config().input_size == 32);
  for (std::size_t i = 0; i < model.store().params().size(); ++i) {
    CHECK(ck.model.store().params()[i].first == model.store().params()[i].first);
    CHECK(ck.model.store().params()[i].second.values() == model.store().params()[i].second.values());
  }
  for (std::size_t i = 0; i < model.store().stats().size(); ++i) {
    CHECK(ck.model.store().stats()[i].second->running_mean == model.store().stats()[i].second->running_mean);
    CHECK(ck.model.store().stats()[i].second->running_var == model.store().stats()[i].second->running_var);
  }
  CHECK(ck.model.infer(img, seq).logits.values() == model.infer(img, seq).logits.values());
  CHECK(serialize_checkpoint(ck.model, 21, {"a", "b", "c"}) == bytes);

  CHECK_THROWS_AS(deserialize_checkpoint("PPGACKPX" + bytes.substr(8)), ParseError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 4)), ParseError);
}

TEST_CASE("run configuration INI round-trip and validation", "[data_io]") {
  RunConfig cfg;
  cfg.data.subjects = 5;
  cfg.wavelet.spacing = ScaleSpacing::linear;
  cfg.auth.threshold = 0.625;
  cfg.preprocess.smoothing_window = 3;
  cfg.train.learning_rate = 3e-4;
  const auto back = RunConfig::from_ini(cfg.to_ini());
  CHECK(back.to_ini() == cfg.to_ini());
  CHECK(back.data.subjects == 5);
  CHECK(back.wavelet.spacing == ScaleSpacing::linear);
  CHECK(back.auth.threshold == 0.625);
  CHECK(back.preprocess.smoothing_window == 3);
  CHECK(back.train.learning_rate == 3e-4);

  RunConfig partial;
  partial.apply_ini("[train]\nepochs = 3\n");
  CHECK(partial.train.epochs == 3);
  CHECK(partial.data.subjects == 8);

  RunConfig keep;
  CHECK_THROWS_AS(keep.apply_ini("[train]\nepochs = 4\n[bogus]\nx = 1\n"), ParseError);
  CHECK(keep.train.epochs == RunConfig{}.train.epochs);  // nothing applied
  CHECK_THROWS_AS(keep.apply_ini("[train]\nepochs = many\n"), ParseError);

  CHECK_NOTHROW(RunConfig{}.validate());
  CHECK(RunConfig{}.model_for(8).lstm.steps == 350);
  RunConfig bad;
  bad.preprocess.band_high_hz = 9.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
