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

#include "hetseg/toy_trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

namespace {

using namespace hetseg;
using namespace hetseg::toy;

// Fraction of car/truck heldout samples predicted correctly, among those
// predicted as either car or truck.
double within_vehicle_accuracy(const LinearModel& m, const std::vector<Sample>& heldout) {
  std::size_t in_group = 0, correct = 0;
  for (const auto& s : heldout) {
    if (s.atom != 2 && s.atom != 3) continue;
    const auto p = predict_atom(m, s.x);
    if (p != 2 && p != 3) continue;
    ++in_group;
    correct += p == s.atom;
  }
  return in_group ? double(correct) / double(in_group) : 0.0;
}

// Single dataset where every label is one atom.
SyntheticScenario flat_scenario(std::uint64_t seed) {
  const std::vector<std::string> atoms = {"a", "b", "c"};
  std::map<std::string, LabelSpace> ds;
  ds["flat"] = {{"a", "b", "c"}, {{0}, {1}, {2}}};
  SyntheticScenario s{AtomTaxonomy(atoms, ds), {}, {}, 10, seed, {}};
  Eigen::VectorXd m(3);
  m << 1, 0, 0;
  s.blobs.push_back({m, 0.8});
  m << 0, 1, 0;
  s.blobs.push_back({m, 0.8});
  m << 0, 0, 1;
  s.blobs.push_back({m, 0.8});
  s.datasets.push_back({"flat", 60, 5, {}});
  s.train.learning_rate = 0.1;
  s.train.steps = 200;
  s.train.momentum = 0.9;
  s.train.decay = 1e-3;
  s.train.gradcheck_every = 0;
  return s;
}

TEST(Generate, DeterministicUnderSeed) {
  const auto s = fine_coarse_scenario();
  const auto a = generate(s);
  const auto b = generate(s);
  ASSERT_EQ(a.heldout.size(), b.heldout.size());
  for (std::size_t i = 0; i < a.heldout.size(); ++i) {
    EXPECT_EQ(a.heldout[i].x, b.heldout[i].x);
  }
  for (const auto& [name, samples] : a.train) {
    const auto& other = b.train.at(name);
    ASSERT_EQ(samples.size(), other.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      EXPECT_EQ(samples[i].x, other[i].x);
      EXPECT_EQ(samples[i].label, other[i].label);
    }
  }
}

TEST(Generate, ZeroSpreadSitsOnTheMean) {
  auto s = fine_coarse_scenario();
  for (auto& b : s.blobs) b.stddev = 0.0;
  const auto data = generate(s);
  for (const auto& [name, samples] : data.train) {
    for (const auto& smp : samples) EXPECT_EQ(smp.x, s.blobs[smp.atom].mean);
  }
  for (const auto& smp : data.heldout) EXPECT_EQ(smp.x, s.blobs[smp.atom].mean);
}

TEST(Generate, CoarseLabelsCollapseAtoms) {
  const auto s = fine_coarse_scenario();
  const auto data = generate(s);
  for (const auto& smp : data.train.at("coarse")) {
    if (smp.atom == 2 || smp.atom == 3) {
      EXPECT_EQ(smp.label, 2u);
    }
  }
  for (const auto& smp : data.train.at("fine")) {
    if (smp.atom == 0 || smp.atom == 4) {
      EXPECT_EQ(smp.label, 0u);
    }
  }
  EXPECT_EQ(data.heldout.size(), 5u * s.heldout_per_atom);
}

TEST(Generate, RejectsBadScenarios) {
  auto s = fine_coarse_scenario();
  s.blobs.pop_back();
  EXPECT_THROW(generate(s), ValidationError);
  s = fine_coarse_scenario();
  s.blobs[1].mean = s.blobs[0].mean;
  EXPECT_THROW(generate(s), ValidationError);
  s = fine_coarse_scenario();
  s.datasets[0].name = "missing";
  EXPECT_THROW(generate(s), Error);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  auto s = fine_coarse_scenario();
  s.train.learning_rate = 0.0;
  s.train.steps = 50;
  const auto data = generate(s);
  const auto start = LinearModel::zeros(s.dim(), 5);
  const auto r = train(start, data, s.taxonomy, s.datasets, s.train);
  EXPECT_EQ(r.model.weight, start.weight);
  EXPECT_EQ(r.model.bias, start.bias);
}

TEST(Train, NegativeLearningRateRejected) {
  auto s = fine_coarse_scenario();
  s.train.learning_rate = -0.1;
  const auto data = generate(s);
  EXPECT_THROW(train(LinearModel::zeros(2, 5), data, s.taxonomy, s.datasets, s.train),
               ValidationError);
}

TEST(Train, DivergenceRaisesNumericError) {
  auto s = fine_coarse_scenario();
  s.train.learning_rate = 1e300;
  s.train.gradcheck_every = 0;
  s.train.steps = 50;
  const auto data = generate(s);
  EXPECT_THROW(train(LinearModel::zeros(2, 5), data, s.taxonomy, s.datasets, s.train),
               NumericError);
}

TEST(Train, GradcheckResidualsSmall) {
  auto s = fine_coarse_scenario();
  s.train.steps = 600;
  const auto out = run(s);
  ASSERT_EQ(out.training.gradcheck.size(), 6u);
  for (const auto& [step, residual] : out.training.gradcheck) {
    EXPECT_EQ(step % 100, 0u);
    EXPECT_LT(residual, 1e-5) << "step " << step;
  }
}

TEST(Train, SmallStepsReduceLoss) {
  auto s = fine_coarse_scenario();
  s.train.learning_rate = 0.01;
  s.train.steps = 400;
  const auto out = run(s);
  const auto& curve = out.training.loss_curve;
  // Compare windows to smooth out batch noise.
  double head = 0, tail = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    head += curve[i];
    tail += curve[curve.size() - 1 - i];
  }
  EXPECT_LT(tail, head);
}

TEST(Train, SingletonGroupsMatchFlatSoftmax) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto s = flat_scenario(seed);
    const auto data = generate(s);
    const auto r = train(LinearModel::zeros(3, 3), data, s.taxonomy, s.datasets, s.train);
    std::vector<Eigen::VectorXd> xs;
    std::vector<std::size_t> ys;
    for (const auto& smp : data.train.at("flat")) {
      xs.push_back(smp.x);
      ys.push_back(smp.atom);
    }
    const auto ref = oracle::flat_softmax_sgd(xs, ys, 3, 5, s.train.steps,
                                              s.train.learning_rate,
                                              s.train.momentum, s.train.decay);
    ASSERT_EQ(r.loss_curve.size(), ref.losses.size());
    for (std::size_t i = 0; i < ref.losses.size(); ++i) {
      EXPECT_NEAR(r.loss_curve[i], ref.losses[i], 1e-12);
    }
    EXPECT_LE((r.model.weight - ref.weight).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((r.model.bias - ref.bias).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Evaluate, ZeroModelScoresTheLargestPrior) {
  const auto s = fine_coarse_scenario();
  const auto data = generate(s);
  const auto rep = evaluate(LinearModel::zeros(2, 5), data.heldout, s.taxonomy);
  // Ties go to atom 0; the heldout set is balanced over 5 atoms.
  EXPECT_DOUBLE_EQ(rep.atom_accuracy, 0.2);
}

TEST(Evaluate, PerfectModelOnNoiselessData) {
  auto s = fine_coarse_scenario();
  for (auto& b : s.blobs) b.stddev = 0.0;
  const auto data = generate(s);
  // Nearest-mean classifier written as a linear model.
  LinearModel m = LinearModel::zeros(2, 5);
  for (Eigen::Index a = 0; a < 5; ++a) {
    m.weight.col(a) = s.blobs[a].mean;
    m.bias[a] = -0.5 * s.blobs[a].mean.squaredNorm();
  }
  const auto rep = evaluate(m, data.heldout, s.taxonomy);
  EXPECT_DOUBLE_EQ(rep.atom_accuracy, 1.0);
  EXPECT_DOUBLE_EQ(rep.label_accuracy.at("fine"), 1.0);
  EXPECT_DOUBLE_EQ(rep.label_accuracy.at("coarse"), 1.0);
  EXPECT_DOUBLE_EQ(rep.knowledgeability, 1.0);
}

TEST(Scenario, JointTrainingResolvesEveryAtom) {
  const auto out = run(fine_coarse_scenario());
  EXPECT_GE(out.evaluation.atom_accuracy, 0.95);
  EXPECT_GT(out.evaluation.label_accuracy.at("fine"), 0.95);
  EXPECT_GT(out.evaluation.label_accuracy.at("coarse"), 0.95);
}

TEST(Scenario, CoarseOnlyCannotSplitTiedAtoms) {
  const auto s = fine_coarse_scenario(false, true);
  const auto data = generate(s);
  const auto out = run(s);
  // Car and truck receive identical updates from zero, so stay tied.
  EXPECT_EQ(out.training.model.weight.col(2), out.training.model.weight.col(3));
  EXPECT_EQ(out.training.model.bias[2], out.training.model.bias[3]);
  EXPECT_NEAR(within_vehicle_accuracy(out.training.model, data.heldout), 0.5, 0.05);
}

TEST(Scenario, JointKnowledgeabilityAtLeastFineOnly) {
  const auto joint = run(fine_coarse_scenario(true, true));
  const auto fine = run(fine_coarse_scenario(true, false));
  EXPECT_GE(joint.evaluation.knowledgeability, fine.evaluation.knowledgeability);
  EXPECT_GE(joint.evaluation.atom_accuracy, fine.evaluation.atom_accuracy);
}

TEST(Scenario, ParseFromJson) {
  const auto j = nlohmann::json::parse(R"({
    "taxonomy": {
      "atoms": ["void", "a", "b"],
      "datasets": {"d": {"labels": ["void", "ab"], "groups": [[0], [1, 2]]}}
    },
    "blobs": [{"mean": [0, 0], "std": 0.1}, {"mean": [1, 0]}, {"mean": [0, 1]}],
    "datasets": [{"name": "d", "samples": 30, "batch": 3}],
    "seed": 5,
    "train": {"lr": 0.02, "steps": 10}
  })");
  const auto s = parse_scenario(j);
  EXPECT_EQ(s.dim(), 2u);
  EXPECT_EQ(s.blobs[1].stddev, 1.0);
  EXPECT_EQ(s.train.steps, 10u);
  EXPECT_DOUBLE_EQ(s.train.learning_rate, 0.02);
  EXPECT_EQ(run(s).training.loss_curve.size(), 10u);

  auto bad = j;
  bad["blobs"].erase(2);
  EXPECT_THROW(parse_scenario(bad), ValidationError);
  bad = j;
  bad.erase("seed");
  EXPECT_THROW(parse_scenario(bad), ValidationError);
}

}  // namespace
