#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ppgauth/auth.hpp"
#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"
#include "ppgauth/rng.hpp"
#include "test_util.hpp"

using namespace ppgauth;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (auto& x : v) x = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("enrolling one embedding returns it", "[auth_engine]") {
  const std::vector<double> v = {0.3, -1.2, 4.5};
  const auto t = enroll({v}, "alice");
  CHECK(t.vector == v);
  CHECK(t.subject_id == "alice");
  CHECK(t.n_enrolled == 1);
}

TEST_CASE("enrolling opposite vectors is rejected", "[auth_engine]") {
  const std::vector<double> v = {1.0, 2.0}, w = {-1.0, -2.0};
  CHECK_THROWS_AS(enroll({v, w}, "x"), InvalidArgument);
  CHECK_THROWS_AS(enroll({}, "x"), InvalidArgument);
  CHECK_THROWS_AS(enroll({{1.0, 2.0}, {1.0}}, "x"), InvalidArgument);
  CHECK_THROWS_AS(enroll({{1.0, NAN}}, "x"), InvalidArgument);
}

TEST_CASE("template is the element-wise mean", "[auth_engine]") {
  Rng rng(1);
  std::vector<std::vector<double>> e;
  for (int i = 0; i < 5; ++i) e.push_back(random_vec(rng, 16));
  const auto t = enroll(e, "s");
  for (std::size_t j = 0; j < 16; ++j) {
    double acc = 0;
    for (const auto& v : e) acc += v[j];
    CHECK_THAT(t.vector[j], WithinAbs(acc / 5.0, 1e-12));
  }
  CHECK(t.n_enrolled == 5);
}

TEST_CASE("cosine similarity", "[auth_engine]") {
  Rng rng(2);
  const auto v = random_vec(rng, 10);
  CHECK_THAT(cosine_similarity(v, v), WithinAbs(1.0, 1e-12));
  const std::vector<double> a = {1, 0, 0}, b = {0, 2, 0};
  CHECK(cosine_similarity(a, b) == 0.0);
  const std::vector<double> zero(3, 0.0);
  CHECK_THROWS_AS(cosine_similarity(a, zero), InvalidArgument);
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<double>{1.0, 2.0}), InvalidArgument);

  // Scaling by a power of two is exact in binary floating point.
  const auto q = random_vec(rng, 10);
  std::vector<double> q4 = q;
  for (auto& x : q4) x *= 4.0;
  CHECK(cosine_similarity(q, v) == cosine_similarity(q4, v));
  std::vector<double> q3 = q;
  for (auto& x : q3) x *= 3.7;
  CHECK_THAT(cosine_similarity(q3, v), WithinAbs(cosine_similarity(q, v), 1e-15));
}

TEST_CASE("identify picks the matching template", "[auth_engine]") {
  Rng rng(3);
  std::vector<SubjectTemplate> gallery;
  for (int i = 0; i < 6; ++i) gallery.push_back(enroll({random_vec(rng, 8)}, "s" + std::to_string(i)));
  const auto d = identify(gallery[3].vector, gallery, 0.9);
  CHECK(d.best_index == 3);
  CHECK(d.accepted);
  REQUIRE(d.subject_id);
  CHECK(*d.subject_id == "s3");
  CHECK_THAT(d.score, WithinAbs(1.0, 1e-12));

  const auto r = identify(gallery[3].vector, gallery, std::nextafter(1.0, 2.0));
  CHECK_FALSE(r.accepted);
  CHECK_FALSE(r.subject_id);
  CHECK(r.best_index == 3);
  CHECK(closest_template(gallery[3].vector, gallery) == 3);
  CHECK_THROWS_AS(identify(gallery[0].vector, {}, 0.5), InvalidArgument);
}

TEST_CASE("identify agrees with a brute-force scan on noisy queries", "[auth_engine]") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SubjectTemplate> gallery;
    for (int i = 0; i < 10; ++i) gallery.push_back(enroll({random_vec(rng, 12)}, std::to_string(i)));
    auto q = gallery[rng.index(10)].vector;
    for (auto& x : q) x += rng.normal(0.0, 0.5);
    std::size_t best = 0;
    double best_s = -2;
    for (std::size_t i = 0; i < gallery.size(); ++i) {
      double dot = 0, nq = 0, nt = 0;
      for (std::size_t j = 0; j < q.size(); ++j) {
        dot += q[j] * gallery[i].vector[j];
        nq += q[j] * q[j];
        nt += gallery[i].vector[j] * gallery[i].vector[j];
      }
      const double s = dot / std::sqrt(nq * nt);
      if (s > best_s) {
        best_s = s;
        best = i;
      }
    }
    const auto d = identify(q, gallery, 0.5);
    CHECK(d.best_index == best);
    CHECK_THAT(d.score, WithinAbs(best_s, 1e-12));
  }
}

TEST_CASE("FAR and FRR", "[auth_engine]") {
  const std::vector<double> g = {0.2, 0.5, 0.9}, im = {0.1, 0.5, 0.6};
  CHECK_THAT(false_accept_rate(im, 0.5), WithinAbs(2.0 / 3.0, 1e-15));
  CHECK_THAT(false_reject_rate(g, 0.5), WithinAbs(1.0 / 3.0, 1e-15));
  CHECK(false_accept_rate(im, 0.0) == 1.0);
  CHECK(false_reject_rate(g, 0.0) == 0.0);
}

TEST_CASE("calibration on perfectly separated scores", "[auth_engine]") {
  const std::vector<double> g(20, 0.9), im(30, 0.1);
  const auto c = calibrate_threshold(g, im);
  CHECK(c.eer == 0.0);
  CHECK(c.threshold > 0.1);
  CHECK(c.threshold <= 0.9);
  CHECK(c.far == 0.0);
  CHECK(c.frr == 0.0);
}

TEST_CASE("swapping genuine and impostor exchanges the error roles", "[auth_engine]") {
  Rng rng(5);
  std::vector<double> g(50), im(60);
  for (auto& s : g) s = rng.uniform(0.55, 1.0);
  for (auto& s : im) s = rng.uniform(0.0, 0.5);
  for (double tau : threshold_candidates(g, im)) {
    CHECK_THAT(false_accept_rate(g, tau), WithinAbs(1.0 - false_reject_rate(g, tau), 1e-12));
    CHECK_THAT(false_reject_rate(im, tau), WithinAbs(1.0 - false_accept_rate(im, tau), 1e-12));
  }
  const auto a = calibrate_threshold(g, im);
  const auto b = calibrate_threshold(im, g);
  CHECK(a.eer == 0.0);
  CHECK(b.eer == 1.0);
}

TEST_CASE("identical score distributions give an EER near one half", "[auth_engine]") {
  Rng rng(6);
  std::vector<double> g(10000), im(10000);
  for (auto& s : g) s = rng.normal();
  for (auto& s : im) s = rng.normal();
  CHECK_THAT(calibrate_threshold(g, im).eer, WithinAbs(0.5, 0.03));
}

TEST_CASE("threshold candidates", "[auth_engine]") {
  const std::vector<double> g = {0.5, 0.7}, im = {0.1, 0.5};
  const auto c = threshold_candidates(g, im);
  REQUIRE(c.size() == 4);
  CHECK(c[0] == 0.1);
  CHECK_THAT(c[1], WithinAbs(0.3, 1e-15));
  CHECK_THAT(c[2], WithinAbs(0.6, 1e-15));
  CHECK(c[3] > 0.7);
  CHECK(c[3] == std::nextafter(0.7, 1.0));
}

TEST_CASE("gallery files round-trip", "[auth_engine]") {
  testutil::TempDir dir("gallery");
  Rng rng(7);
  std::vector<SubjectTemplate> gallery;
  for (int i = 0; i < 3; ++i) gallery.push_back(enroll({random_vec(rng, 5), random_vec(rng, 5)}, "id" + std::to_string(i)));
  save_gallery(dir / "g.json", gallery);
  const auto back = load_gallery(dir / "g.json");
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].subject_id == gallery[i].subject_id);
    CHECK(back[i].vector == gallery[i].vector);
    CHECK(back[i].n_enrolled == 2);
  }
  write_file_atomic(dir / "bad.json", "{\"version\": 1, \"templates\": [{\"subject_id\": 3}]}");
  CHECK_THROWS_AS(load_gallery(dir / "bad.json"), ParseError);
}
