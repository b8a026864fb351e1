#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spect/augment.hpp"
#include "spect/preprocess.hpp"

using namespace spect;

namespace {

Volume from_values(Index t, Index h, Index w, std::initializer_list<float> vals) {
  Volume v(t, h, w);
  Index i = 0;
  for (float x : vals) v.tensor()[i++] = x;
  return v;
}

Volume random_volume(Index t, Index h, Index w, Rng& rng) {
  Volume v(t, h, w);
  for (Index i = 0; i < v.tensor().size(); ++i) v.tensor()[i] = static_cast<float>(rng.uniform());
  return v;
}

}  // namespace

TEST_CASE("minmax_normalize maps [2,4,6] to [0,0.5,1]") {
  auto v = from_values(1, 1, 3, {2.0f, 4.0f, 6.0f});
  auto n = minmax_normalize(v);
  CHECK(n.at(0, 0, 0) == doctest::Approx(0.0));
  CHECK(n.at(0, 0, 1) == doctest::Approx(0.5));
  CHECK(n.at(0, 0, 2) == doctest::Approx(1.0));
}

TEST_CASE("minmax_normalize is idempotent on spanning inputs and zeros constants") {
  auto v = from_values(1, 2, 2, {0.0f, 0.25f, 0.75f, 1.0f});
  auto n = minmax_normalize(v);
  for (Index i = 0; i < 4; ++i) CHECK(n.tensor()[i] == v.tensor()[i]);

  Volume c(2, 2, 2);
  c.tensor().array() = 3.5f;
  auto nc = minmax_normalize(c);
  for (Index i = 0; i < nc.tensor().size(); ++i) CHECK(nc.tensor()[i] == 0.0f);
}

TEST_CASE("minmax_normalize is invariant to positive affine maps") {
  Rng rng(11);
  auto v = random_volume(4, 8, 8, rng);
  auto base = minmax_normalize(v);
  // Offsets stay within ~1000 ulps of a*range: larger |b|/a quantizes the
  // float32 input itself beyond the 1e-6 tolerance before normalization runs.
  for (auto [a, b] : {std::pair{2.5f, -1.0f}, std::pair{0.03f, 0.01f}, std::pair{100.0f, 250.0f}}) {
    Volume w(v.slices(), v.height(), v.width());
    w.tensor().array() = v.tensor().array() * a + b;
    auto n = minmax_normalize(w);
    for (Index i = 0; i < n.tensor().size(); ++i)
      CHECK(std::abs(n.tensor()[i] - base.tensor()[i]) < 1e-6f);
  }
}

TEST_CASE("filter keeps exactly the slices matching a brute-force count") {
  // 10 slices; 0-1 and 8-9 near zero.
  Volume v(10, 30, 30);
  Rng rng(5);
  for (Index t = 2; t < 8; ++t)
    for (Index y = 0; y < 30; ++y)
      for (Index x = 0; x < 30; ++x) v.at(t, y, x) = static_cast<float>(rng.uniform());
  auto f = filter_incomplete_slices(v, 0.1, 400);
  CHECK(f.slices() == 6);
  for (Index t = 0; t < 6; ++t)
    for (Index y = 0; y < 30; ++y)
      for (Index x = 0; x < 30; ++x) CHECK(f.at(t, y, x) == v.at(t + 2, y, x));
}

TEST_CASE("filter boundary: exactly min_pixels qualifying pixels keeps the slice") {
  Volume v(2, 4, 4);
  // Slice 0: exactly 3 pixels above threshold; slice 1: 2.
  v.at(0, 0, 0) = 0.2f;
  v.at(0, 1, 1) = 0.2f;
  v.at(0, 2, 2) = 0.2f;
  v.at(1, 0, 0) = 0.2f;
  v.at(1, 1, 1) = 0.2f;
  auto f = filter_incomplete_slices(v, 0.1, 3);
  CHECK(f.slices() == 1);
  CHECK(f.at(0, 0, 0) == 0.2f);

  // Intensity comparison is strict: a pixel exactly at the threshold does not count.
  Volume eq(1, 2, 2);
  eq.at(0, 0, 0) = 0.1f;
  CHECK_THROWS_AS(filter_incomplete_slices(eq, 0.1, 1), EmptyVolumeError);
}

TEST_CASE("filter raises EmptyVolume when nothing survives") {
  Volume v(5, 4, 4);
  CHECK_THROWS_AS(filter_incomplete_slices(v, 0.1, 1), EmptyVolumeError);
}

TEST_CASE("encode_covariates formula and range check") {
  auto c = encode_covariates(65.0, Sex::male);
  CHECK(c.age_norm == doctest::Approx(0.65));
  CHECK(c.sex_dummy == 1.0);
  auto c0 = encode_covariates(0.0, Sex::female);
  CHECK(c0.age_norm == 0.0);
  CHECK(c0.sex_dummy == 0.0);
  auto c100 = encode_covariates(100.0, Sex::male);
  CHECK(c100.age_norm == 1.0);
  CHECK_THROWS_AS(encode_covariates(101.0, Sex::male), ValidationError);
  CHECK_THROWS_AS(encode_covariates(-1.0, Sex::female), ValidationError);
}

TEST_CASE("zero rotation plus crop equals the central window") {
  Rng rng(3);
  auto v = random_volume(3, 128, 128, rng);
  AugmentParams p;
  p.enabled = false;
  Rng aug_rng(0);
  auto out = video_transform(v, p, aug_rng);
  CHECK(out.slices() == 3);
  CHECK(out.height() == 72);
  CHECK(out.width() == 72);
  // (128-72)/2 = 28
  for (Index t = 0; t < 3; ++t)
    for (Index y = 0; y < 72; ++y)
      for (Index x = 0; x < 72; ++x) CHECK(out.at(t, y, x) == v.at(t, y + 28, x + 28));
}

TEST_CASE("video transform shares one angle across slices and is seed-deterministic") {
  Rng rng(9);
  Volume v(4, 80, 80);
  for (Index i = 0; i < v.tensor().size(); ++i) v.tensor()[i] = static_cast<float>(rng.uniform());
  // Make all slices identical so a shared angle implies identical outputs.
  Index plane = 80 * 80;
  for (Index t = 1; t < 4; ++t)
    std::copy(v.tensor().data(), v.tensor().data() + plane, v.tensor().data() + t * plane);

  AugmentParams p;
  Rng r1 = Rng::derive(42, "aug", 0, 0);
  Rng r2 = Rng::derive(42, "aug", 0, 0);
  auto o1 = video_transform(v, p, r1);
  auto o2 = video_transform(v, p, r2);
  for (Index i = 0; i < o1.tensor().size(); ++i) CHECK(o1.tensor()[i] == o2.tensor()[i]);
  for (Index t = 1; t < 4; ++t)
    for (Index y = 0; y < 72; ++y)
      for (Index x = 0; x < 72; ++x) CHECK(o1.at(t, y, x) == o1.at(0, y, x));
}

TEST_CASE("video transform rejects inputs smaller than the crop") {
  Volume v(2, 64, 64);
  AugmentParams p;
  Rng rng(0);
  CHECK_THROWS_AS(video_transform(v, p, rng), ShapeError);
}

TEST_CASE("depth resample: identity, two-point ramp, and convexity") {
  Rng rng(21);
  auto v = random_volume(32, 8, 8, rng);
  auto same = trilinear_resample_depth(v, 32);
  for (Index i = 0; i < v.tensor().size(); ++i) CHECK(same.tensor()[i] == v.tensor()[i]);

  Volume two(2, 4, 4);
  two.tensor().array().segment(16, 16) = 1.0f;
  auto five = trilinear_resample_depth(two, 5);
  float expect[5] = {0.0f, 0.25f, 0.5f, 0.75f, 1.0f};
  for (Index t = 0; t < 5; ++t)
    for (Index k = 0; k < 16; ++k) CHECK(five.tensor()[t * 16 + k] == doctest::Approx(expect[t]));

  auto any = trilinear_resample_depth(v, 11);
  float lo = v.tensor().array().minCoeff(), hi = v.tensor().array().maxCoeff();
  for (Index i = 0; i < any.tensor().size(); ++i) {
    CHECK(any.tensor()[i] >= lo);
    CHECK(any.tensor()[i] <= hi);
  }
}

TEST_CASE("depth resample doubles then halves a linear ramp exactly") {
  Volume ramp(9, 4, 4);
  for (Index t = 0; t < 9; ++t)
    for (Index k = 0; k < 16; ++k) ramp.tensor()[t * 16 + k] = static_cast<float>(t) / 8.0f;
  auto up = trilinear_resample_depth(ramp, 17);
  auto back = trilinear_resample_depth(up, 9);
  for (Index i = 0; i < ramp.tensor().size(); ++i)
    CHECK(back.tensor()[i] == doctest::Approx(ramp.tensor()[i]).epsilon(1e-6));
}

TEST_CASE("single-slice input replicates across target depth") {
  Volume one(1, 3, 3);
  for (Index i = 0; i < 9; ++i) one.tensor()[i] = static_cast<float>(i);
  auto out = trilinear_resample_depth(one, 4);
  CHECK(out.slices() == 4);
  for (Index t = 0; t < 4; ++t)
    for (Index k = 0; k < 9; ++k) CHECK(out.tensor()[t * 9 + k] == one.tensor()[k]);
}

TEST_CASE("replicate_channels copies each slice three times") {
  Rng rng(2);
  auto v = random_volume(5, 6, 6, rng);
  auto f = replicate_channels(v);
  CHECK(f.shape() == Shape{5, 3, 6, 6});
  for (Index t = 0; t < 5; ++t)
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < 6; ++y)
        for (Index x = 0; x < 6; ++x) CHECK(f(t, c, y, x) == v.at(t, y, x));
}

TEST_CASE("full pipeline yields (32, 3, 72, 72) per patient") {
  Rng rng(17);
  Volume raw(20, 96, 96);
  for (Index i = 0; i < raw.tensor().size(); ++i) raw.tensor()[i] = static_cast<float>(rng.uniform(0.0, 4.0));
  auto norm = minmax_normalize(raw);
  auto filt = filter_incomplete_slices(norm, 0.1, 400);
  AugmentParams p;
  Rng aug = Rng::derive(1, "aug", 0, 0);
  auto vid = video_transform(filt, p, aug);
  auto depth = trilinear_resample_depth(vid, p.target_depth);
  auto feat = replicate_channels(depth);
  CHECK(feat.shape() == Shape{32, 3, 72, 72});
}
