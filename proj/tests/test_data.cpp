#include <cmath>
#include <functional>
#include <set>
#include <string>

#include "doctest.h"
#include "ftlab/data.hpp"
#include "ftlab/error.hpp"

using namespace ftlab;

namespace {

TaskSpec small_spec() {
  TaskSpec s;
  s.num_classes_upstream = 4;
  s.num_classes_downstream = 8;
  s.image_size = 8;
  s.samples_per_class = 10;
  s.test_per_class = 10;
  s.upstream_per_class = 10;
  s.seed = 3;
  return s;
}

// Nearest-class-mean classifier: a linear probe fitted in closed form.
struct NearestCentroid {
  std::vector<std::vector<double>> means;

  explicit NearestCentroid(const Dataset& d) : means(d.num_classes, std::vector<double>(d.sample_size(), 0.0)) {
    std::vector<double> counts(d.num_classes, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i) {
      auto s = d.sample(i);
      for (std::size_t j = 0; j < s.size(); ++j) means[d.labels[i]][j] += s[j];
      counts[d.labels[i]] += 1.0;
    }
    for (std::size_t c = 0; c < means.size(); ++c)
      for (double& v : means[c]) v /= counts[c];
  }

  double accuracy(const Dataset& d) const {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      auto s = d.sample(i);
      std::size_t best = 0;
      double best_dist = INFINITY;
      for (std::size_t c = 0; c < means.size(); ++c) {
        double dist = 0.0;
        for (std::size_t j = 0; j < s.size(); ++j) dist += (s[j] - means[c][j]) * (s[j] - means[c][j]);
        if (dist < best_dist) best_dist = dist, best = c;
      }
      ok += static_cast<int>(best) == d.labels[i];
    }
    return double(ok) / double(d.size());
  }
};

std::size_t hash_sample(std::span<const double> s) {
  return std::hash<std::string>{}(std::string(reinterpret_cast<const char*>(s.data()), s.size() * sizeof(double)));
}

}  // namespace

TEST_CASE("task generation is a pure function of the spec") {
  auto a = make_task(small_spec()), b = make_task(small_spec());
  CHECK(a.train.pixels == b.train.pixels);
  CHECK(a.test.pixels == b.test.pixels);
  CHECK(a.upstream.pixels == b.upstream.pixels);
  CHECK(a.train.labels == b.train.labels);
  auto other = small_spec();
  other.seed = 4;
  CHECK(make_task(other).train.pixels != a.train.pixels);
}

TEST_CASE("splits are disjoint and label-balanced") {
  auto t = make_task(small_spec());
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const Dataset* d : {&t.upstream, &t.train, &t.test})
    for (std::size_t i = 0; i < d->size(); ++i, ++total) seen.insert(hash_sample(d->sample(i)));
  CHECK(seen.size() == total);
  for (const Dataset* d : {&t.train, &t.test, &t.upstream}) {
    std::vector<std::size_t> counts(d->num_classes, 0);
    for (int y : d->labels) counts[y]++;
    for (auto c : counts) CHECK(c == counts[0]);
    for (double p : d->pixels) CHECK((p >= 0.0 && p <= 1.0));
  }
  CHECK(t.train.num_classes == 8);
  CHECK(t.upstream.num_classes == 4);
  CHECK(t.train.size() == 80);
}

TEST_CASE("default tree and explicit trees") {
  TaskSpec s;
  CHECK(s.parent_of(0) == 0);
  CHECK(s.parent_of(4) == 0);
  CHECK(s.parent_of(5) == 1);
  CHECK(s.parent_of(49) == 9);
  s.class_tree = std::vector<std::size_t>(50, 2);
  CHECK(s.parent_of(7) == 2);
  s.class_tree[3] = 10;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("children share their parent's pattern") {
  auto s = small_spec();
  s.child_scale = 0.0;
  auto up = class_prototypes(s, false), down = class_prototypes(s, true);
  for (std::size_t c = 0; c < down.size(); ++c) CHECK(down[c] == up[s.parent_of(c)]);
}

TEST_CASE("separable construction is solved by a linear probe") {
  TaskSpec s = small_spec();
  s.num_classes_upstream = 2;
  s.num_classes_downstream = 2;
  s.separation = 5.0;
  s.noise_std = 0.0;
  auto t = make_task(s);
  NearestCentroid probe(t.train);
  CHECK(probe.accuracy(t.test) == 1.0);
}

TEST_CASE("collapsed prototypes give chance accuracy and a warning") {
  TaskSpec s = small_spec();
  s.separation = 1e-12;
  s.test_per_class = 200;
  auto t = make_task(s);
  REQUIRE(t.warnings.size() == 1);
  NearestCentroid probe(t.train);
  const double chance = 1.0 / 8.0, n = double(t.test.size());
  CHECK(probe.accuracy(t.test) <= chance + 3.0 * std::sqrt(chance * (1 - chance) / n));
}

TEST_CASE("fine-grained children are harder than their parents") {
  TaskSpec s = small_spec();
  s.num_classes_upstream = 2;
  s.num_classes_downstream = 10;
  s.child_scale = 0.2;
  s.separation = 0.1;
  s.noise_std = 0.3;
  s.samples_per_class = 30;
  s.test_per_class = 100;
  s.upstream_per_class = 300;
  auto t = make_task(s);
  // Parent-level probe on a held-out half of the upstream set vs the
  // child-level probe downstream. Samples are class-interleaved.
  std::vector<std::size_t> first, second;
  for (std::size_t i = 0; i < t.upstream.size(); ++i) (i < t.upstream.size() / 2 ? first : second).push_back(i);
  const double coarse = NearestCentroid(t.upstream.subset(first)).accuracy(t.upstream.subset(second));
  const double fine = NearestCentroid(t.train).accuracy(t.test);
  CHECK(coarse > 0.9);
  CHECK(fine < coarse - 0.2);
}

TEST_CASE("shift names round-trip") {
  for (auto k : all_shifts()) CHECK(parse_shift(to_string(k)) == k);
  CHECK_THROWS_AS(parse_shift("cartoon"), ConfigError);
  DomainShift bad{ShiftKind::Blur, 1.5, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero-strength shifts are the identity") {
  auto t = make_task(small_spec());
  for (auto k : all_shifts()) {
    INFO(to_string(k));
    auto out = apply_shift(t.test, DomainShift{k, 0.0, 1});
    CHECK(out.pixels == t.test.pixels);
  }
}

TEST_CASE("shifts preserve labels and the pixel range") {
  auto t = make_task(small_spec());
  for (auto k : all_shifts())
    for (double s : {0.2, 0.7, 1.0}) {
      auto out = apply_shift(t.test, DomainShift{k, s, 5});
      CHECK(out.labels == t.test.labels);
      CHECK(out.pixels.size() == t.test.pixels.size());
      for (double p : out.pixels) CHECK((p >= 0.0 && p <= 1.0));
      if (k != ShiftKind::Identity) CHECK(out.pixels != t.test.pixels);
    }
}

TEST_CASE("shift closed forms") {
  auto t = make_task(small_spec());
  auto twice = apply_shift(apply_shift(t.test, {ShiftKind::Invert, 1.0, 0}), {ShiftKind::Invert, 1.0, 0});
  for (std::size_t i = 0; i < twice.pixels.size(); ++i) CHECK(std::abs(twice.pixels[i] - t.test.pixels[i]) < 1e-12);

  Dataset flat = t.test;
  for (double& p : flat.pixels) p = 0.3;
  for (double p : apply_shift(flat, {ShiftKind::EdgeSketch, 1.0, 0}).pixels) CHECK(p == 1.0);
  for (double p : apply_shift(flat, {ShiftKind::Blur, 1.0, 0}).pixels) CHECK(p == doctest::Approx(0.3).epsilon(1e-12));
  for (double p : apply_shift(t.test, {ShiftKind::Contrast, 1.0, 0}).pixels) CHECK(p == 0.5);

  auto a = apply_shift(t.test, {ShiftKind::StyleNoise, 0.5, 1});
  auto b = apply_shift(t.test, {ShiftKind::StyleNoise, 0.5, 1});
  auto c = apply_shift(t.test, {ShiftKind::StyleNoise, 0.5, 2});
  CHECK(a.pixels == b.pixels);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("edge sketch hurts a probe more than a light blur") {
  TaskSpec s = small_spec();
  s.noise_std = 0.1;
  s.test_per_class = 50;
  auto t = make_task(s);
  NearestCentroid probe(t.train);
  const double clean = probe.accuracy(t.test);
  const double blurred = probe.accuracy(apply_shift(t.test, {ShiftKind::Blur, 0.2, 0}));
  const double sketch = probe.accuracy(apply_shift(t.test, {ShiftKind::EdgeSketch, 1.0, 0}));
  CHECK(clean - sketch > clean - blurred);
}
