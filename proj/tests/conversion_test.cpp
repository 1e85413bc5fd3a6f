// Copyright 2026 The HetSeg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hetseg/conversion.hpp"
#include "oracles.hpp"

namespace {

using hetseg::AtomId;
using hetseg::LabelSpace;
using hetseg::ProbRaster;
using Vec = std::vector<double>;

void expect_near_vec(const Vec& a, const Vec& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

TEST(Softmax, Cases) {
  expect_near_vec(hetseg::softmax(Vec{0, 0, 0}), {1. / 3, 1. / 3, 1. / 3}, 1e-15);
  const auto big = hetseg::softmax(Vec{1000, 0});
  EXPECT_DOUBLE_EQ(big[0], 1.0);
  EXPECT_TRUE(std::isfinite(big[1]));
  expect_near_vec(hetseg::softmax(Vec{std::log(2.0), 0}), {2. / 3, 1. / 3}, 1e-15);
}

TEST(GroupSum, Cases) {
  expect_near_vec(hetseg::group_sum(Vec{0.2, 0.3, 0.5},
                                    LabelSpace{{"a", "b"}, {{0, 1}, {2}}}),
                  {0.5, 0.5}, 1e-15);
  const Vec s{0.1, 0.2, 0.7};
  EXPECT_EQ(hetseg::group_sum(s, LabelSpace{{"a", "b", "c"}, {{0}, {1}, {2}}}), s);
  EXPECT_NEAR(hetseg::group_sum(Vec(4, 0.25), LabelSpace{{"a"}, {{0, 1, 2, 3}}})[0],
              1.0, 1e-15);
  EXPECT_THROW(hetseg::group_sum(Vec{0.5, 0.5}, LabelSpace{{"a"}, {{0, 1, 2}}}),
               hetseg::ValidationError);
}

TEST(GroupSumProperty, MatchesOracleAndStaysNormalized) {
  std::mt19937_64 rng(17);
  std::gamma_distribution<double> gamma(0.5, 1.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t a = 1 + rng() % 30;
    Vec sigma(a);
    double total = 0;
    for (auto& v : sigma) total += v = gamma(rng) + 1e-12;
    for (auto& v : sigma) v /= total;
    const auto space = oracle::random_partition(a, 10, rng);
    const auto got = hetseg::group_sum(sigma, space);
    expect_near_vec(got, oracle::group_sum(sigma, space), 1e-15);
    double sum = 0;
    for (double v : got) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(LossPerImage, Cases) {
  const LabelSpace space{{"a", "b"}, {{0}, {1, 2}}};
  ProbRaster sigma(1, 1, 3);
  sigma.data = {0.0, 0.4, 0.6};
  hetseg::ClassRaster y(1, 1, 1);
  EXPECT_NEAR(hetseg::loss_per_image(y, sigma, space).value, 0.0, 1e-15);

  sigma.data = {0.5, 0.25, 0.25};
  EXPECT_NEAR(hetseg::loss_per_image(y, sigma, space).value, std::log(2.0), 1e-15);

  ProbRaster two(2, 1, 3);
  two.data = {0.0, 1.0, 0.0, 0.5, 0.5, 0.0};
  hetseg::ClassRaster y2(2, 1, 1);
  EXPECT_NEAR(hetseg::loss_per_image(y2, two, space).value, std::log(2.0) / 2,
              1e-15);

  EXPECT_EQ(hetseg::loss_per_image(y2, two, space, {1}).value, 0.0);
  EXPECT_THROW(hetseg::loss_per_image(hetseg::ClassRaster(2, 1, 2), two, space),
               hetseg::ValidationError);
}

TEST(LossPerImage, ClampFlag) {
  const LabelSpace space{{"a", "b"}, {{0}, {1}}};
  ProbRaster sigma(1, 1, 2);
  sigma.data = {1.0, 0.0};
  const auto r = hetseg::loss_per_image(hetseg::ClassRaster(1, 1, 1), sigma, space);
  EXPECT_TRUE(r.clamped);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Gradient, IndicatorFormCases) {
  expect_near_vec(hetseg::grad_logits_indicator(Vec{1. / 3, 1. / 3, 1. / 3},
                                                std::vector<AtomId>{0, 1}),
                  {-2. / 3, -2. / 3, 1. / 3}, 1e-15);
  expect_near_vec(hetseg::grad_logits_indicator(Vec{0.5, 0.5},
                                                std::vector<AtomId>{0}),
                  {-0.5, 0.5}, 1e-15);
}

TEST(Gradient, ExactCases) {
  // With a multi-atom group the exact gradient rescales by the group mass.
  expect_near_vec(hetseg::grad_logits(Vec{1. / 3, 1. / 3, 1. / 3},
                                      std::vector<AtomId>{0, 1}),
                  {-1. / 6, -1. / 6, 1. / 3}, 1e-15);
  expect_near_vec(hetseg::grad_logits(Vec{0, 0, 1, 0}, std::vector<AtomId>{2}),
                  {0, 0, 0, 0}, 0.0);
  expect_near_vec(hetseg::grad_logits(Vec{0.5, 0.5}, std::vector<AtomId>{0}),
                  {-0.5, 0.5}, 1e-15);
  EXPECT_THROW(hetseg::grad_logits(Vec{1.0}, std::vector<AtomId>{}),
               hetseg::ValidationError);
}

TEST(Gradient, SingletonFormsAgree) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0, 2);
  for (int t = 0; t < 200; ++t) {
    Vec z(1 + rng() % 12);
    for (auto& v : z) v = n(rng);
    const auto s = hetseg::softmax(z);
    const std::vector<AtomId> g{static_cast<AtomId>(rng() % z.size())};
    EXPECT_EQ(hetseg::grad_logits(s, g), hetseg::grad_logits_indicator(s, g));
  }
}

TEST(GradientProperty, SumLaws) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 2);
  for (int t = 0; t < 500; ++t) {
    Vec z(1 + rng() % 20);
    for (auto& v : z) v = n(rng);
    const auto s = hetseg::softmax(z);
    std::vector<AtomId> g;
    for (AtomId m = 0; m < z.size(); ++m) {
      if (rng() % 2) g.push_back(m);
    }
    if (g.empty()) g.push_back(0);
    double ind = 0, exact = 0;
    for (double v : hetseg::grad_logits_indicator(s, g)) ind += v;
    for (double v : hetseg::grad_logits(s, g)) exact += v;
    EXPECT_NEAR(ind, 1.0 - static_cast<double>(g.size()), 1e-12);
    // d/dc of a shift-invariant loss is zero.
    EXPECT_NEAR(exact, 0.0, 1e-12);
  }
}

TEST(FiniteDiff, Cases) {
  EXPECT_LT(hetseg::finite_diff_check(Vec{0.3, -1.2, 2.0, 0.7, -0.4},
                                      std::vector<AtomId>{1, 3}, 1e-5),
            1e-6);
  EXPECT_LT(hetseg::finite_diff_check(Vec{0, 0, 0, 0}, std::vector<AtomId>{0}, 1e-5),
            1e-8);
  const Vec z{0.5, -0.3, 1.1};
  const std::vector<AtomId> all{0, 1, 2};
  EXPECT_LT(hetseg::finite_diff_check(z, all, 1e-5), 1e-8);
  for (double g : hetseg::grad_logits(hetseg::softmax(z), all)) {
    EXPECT_NEAR(g, 0.0, 1e-15);
  }
  EXPECT_THROW(hetseg::finite_diff_check(z, all, 0.0), hetseg::ValidationError);
}

TEST(Cce, Cases) {
  EXPECT_EQ(hetseg::dense_cce(Vec{0, 1, 0}, Vec{0, 1, 0}).value, 0.0);
  EXPECT_NEAR(hetseg::dense_cce(Vec{0.5, 0.5}, Vec{0.5, 0.5}).value, std::log(2.0),
              1e-15);
  EXPECT_NEAR(hetseg::dense_cce(Vec{1, 0}, Vec{0.25, 0.75}).value, std::log(4.0),
              1e-15);
  EXPECT_FALSE(hetseg::dense_cce(Vec{1, 0}, Vec{1, 0}).clamped);
  EXPECT_THROW(hetseg::dense_cce(Vec{1}, Vec{0.5, 0.5}), hetseg::ValidationError);
}

TEST(CceProperty, SparseEqualsDenseOneHot) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 300; ++t) {
    Vec z(2 + rng() % 10);
    for (auto& v : z) v = std::normal_distribution<double>(0, 3)(rng);
    const auto s = hetseg::softmax(z);
    const std::size_t k = rng() % s.size();
    EXPECT_NEAR(hetseg::sparse_cce(k, s).value, -std::log(s[k]), 1e-12);
  }
}

TEST(HierarchicalLoss, Cases) {
  const std::vector<std::pair<double, double>> three{{1.0, 1.0}, {0.5, 0.1}, {0.5, 0.1}};
  EXPECT_NEAR(hetseg::hierarchical_loss(three).total, 1.1, 1e-15);
  EXPECT_EQ(hetseg::hierarchical_loss({}).total, 0.0);
  const std::vector<std::pair<double, double>> one{{2.0, 1.0}};
  EXPECT_EQ(hetseg::hierarchical_loss(one).total, 2.0);
  const std::vector<std::pair<double, double>> bad{{2.0, -1.0}};
  EXPECT_THROW(hetseg::hierarchical_loss(bad), hetseg::ValidationError);
}

hetseg::HierarchyNode three_level() {
  hetseg::HierarchyNode rider{"rider_clf", {"bicyclist", "motorcyclist"}, {}};
  hetseg::HierarchyNode human{"human_clf", {"person", "rider"}, {}};
  human.children.emplace("rider", rider);
  hetseg::HierarchyNode root{"root", {"road", "human"}, {}};
  root.children.emplace("human", human);
  return root;
}

ProbRaster one_pixel(Vec v) {
  ProbRaster r(1, 1, v.size());
  r.data = std::move(v);
  return r;
}

TEST(HierarchicalDecode, Rules) {
  const auto tree = three_level();
  const auto names = hetseg::decoded_label_names(tree);
  ASSERT_EQ(names, (std::vector<std::string>{"road", "human", "person", "rider",
                                             "bicyclist", "motorcyclist"}));
  auto decode = [&](Vec root, Vec human, Vec rider) {
    std::map<std::string, ProbRaster> probs{{"root", one_pixel(root)},
                                            {"human_clf", one_pixel(human)},
                                            {"rider_clf", one_pixel(rider)}};
    return names[hetseg::hierarchical_decode(tree, probs).data[0]];
  };
  EXPECT_EQ(decode({0.9, 0.1}, {0.2, 0.8}, {0.5, 0.5}), "road");
  EXPECT_EQ(decode({0.1, 0.9}, {0.8, 0.2}, {0.5, 0.5}), "person");
  EXPECT_EQ(decode({0.1, 0.9}, {0.3, 0.7}, {0.2, 0.8}), "motorcyclist");

  std::map<std::string, ProbRaster> missing{{"root", one_pixel({0.5, 0.5})}};
  EXPECT_THROW(hetseg::hierarchical_decode(tree, missing), hetseg::ValidationError);
}

TEST(HierarchicalDecode, ChildThresholdKeepsParent) {
  const auto tree = three_level();
  const auto names = hetseg::decoded_label_names(tree);
  std::map<std::string, ProbRaster> probs{{"root", one_pixel({0.1, 0.9})},
                                          {"human_clf", one_pixel({0.45, 0.55})},
                                          {"rider_clf", one_pixel({0.5, 0.5})}};
  EXPECT_EQ(names[hetseg::hierarchical_decode(tree, probs, 0.6).data[0]], "human");
}

TEST(HierarchicalDecodeProperty, SingleNodeIsFlatArgmax) {
  std::mt19937_64 rng(6);
  hetseg::HierarchyNode flat{"root", {"a", "b", "c", "d"}, {}};
  for (int t = 0; t < 100; ++t) {
    ProbRaster r(5, 3, 4);
    for (std::size_t p = 0; p < r.num_pixels(); ++p) {
      Vec z(4);
      for (auto& v : z) v = std::normal_distribution<double>()(rng);
      const auto s = hetseg::softmax(z);
      std::copy(s.begin(), s.end(), r.pixel(p).begin());
    }
    const auto out = hetseg::hierarchical_decode(flat, {{"root", r}});
    for (std::size_t p = 0; p < r.num_pixels(); ++p) {
      EXPECT_EQ(out.data[p], hetseg::argmax(r.pixel(p)));
    }
  }
}

TEST(LossProperty, SingletonGroupsEqualFlatCrossEntropy) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 100; ++t) {
    const std::size_t a = 2 + rng() % 8;
    LabelSpace space;
    for (AtomId i = 0; i < a; ++i) {
      space.labels.push_back("l" + std::to_string(i));
      space.groups.push_back({i});
    }
    ProbRaster sigma(4, 4, a);
    hetseg::ClassRaster y(4, 4);
    double flat = 0;
    for (std::size_t p = 0; p < sigma.num_pixels(); ++p) {
      Vec z(a);
      for (auto& v : z) v = std::normal_distribution<double>(0, 2)(rng);
      const auto s = hetseg::softmax(z);
      std::copy(s.begin(), s.end(), sigma.pixel(p).begin());
      y.data[p] = static_cast<std::uint16_t>(rng() % a);
      flat += hetseg::sparse_cce(y.data[p], s).value;
    }
    EXPECT_NEAR(hetseg::loss_per_image(y, sigma, space).value, flat / 16, 1e-12);
  }
}

}  // namespace
