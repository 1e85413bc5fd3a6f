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

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hetseg/conversion.hpp"
#include "hetseg/error.hpp"
#include "hetseg/metrics.hpp"
#include "hetseg/taxonomy.hpp"
#include "json.hpp"

namespace hetseg::toy {

struct Blob {
  Eigen::VectorXd mean;
  double stddev = 1.0;
};

struct DatasetConfig {
  std::string name;           // must exist in the taxonomy
  std::size_t samples = 0;    // training samples to generate
  std::size_t batch = 1;      // samples drawn from this dataset per step
  std::vector<AtomId> atoms;  // atoms to sample from; empty = all
};

struct TrainOptions {
  double learning_rate = 0.05;
  std::size_t steps = 1000;
  double momentum = 0.9;
  double decay = 0.0;                // L2 on the weight matrix
  std::size_t gradcheck_every = 100;  // 0 disables
  double gradcheck_epsilon = 1e-5;
};

// Synthetic stand-in for images: each atom owns an isotropic Gaussian blob in
// feature space, and each dataset observes atoms only through its labels.
struct SyntheticScenario {
  AtomTaxonomy taxonomy;
  std::vector<Blob> blobs;  // one per atom
  std::vector<DatasetConfig> datasets;
  std::size_t heldout_per_atom = 200;
  std::uint64_t seed = 0;
  TrainOptions train;

  std::size_t dim() const {
    return blobs.empty() ? 0 : static_cast<std::size_t>(blobs[0].mean.size());
  }
};

struct Sample {
  Eigen::VectorXd x;
  LabelId label = 0;  // dataset label (unused for heldout)
  AtomId atom = 0;    // hidden ground-truth atom
};

struct GeneratedData {
  std::map<std::string, std::vector<Sample>> train;
  std::vector<Sample> heldout;  // heldout_per_atom samples of every atom
};

inline void validate(const SyntheticScenario& s) {
  const std::size_t a = s.taxonomy.atom_count();
  if (a < 2) throw ValidationError("scenario: need at least 2 atoms");
  if (s.blobs.size() != a) {
    throw ValidationError("scenario: " + std::to_string(s.blobs.size()) +
                          " blobs for " + std::to_string(a) + " atoms");
  }
  for (std::size_t i = 0; i < a; ++i) {
    if (static_cast<std::size_t>(s.blobs[i].mean.size()) != s.dim() ||
        s.dim() == 0) {
      throw ValidationError("scenario: blob " + std::to_string(i) +
                            " has wrong dimension");
    }
    if (s.blobs[i].stddev < 0.0) {
      throw ValidationError("scenario: negative stddev");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (s.blobs[i].mean == s.blobs[j].mean) {
        throw ValidationError("scenario: blobs " + std::to_string(j) +
                              " and " + std::to_string(i) +
                              " share a mean");
      }
    }
  }
  for (const auto& ds : s.datasets) {
    s.taxonomy.dataset(ds.name);
    for (AtomId atom : ds.atoms) {
      if (atom >= a) throw ValidationError("scenario: atom id out of range");
    }
  }
}

// Deterministic under scenario.seed. Training datasets are generated in
// declaration order, heldout last.
inline GeneratedData generate(const SyntheticScenario& s) {
  validate(s);
  std::mt19937_64 rng(s.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t num_atoms = s.taxonomy.atom_count();
  auto draw = [&](AtomId atom) {
    Eigen::VectorXd x(s.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x[i] = s.blobs[atom].mean[i] + s.blobs[atom].stddev * normal(rng);
    }
    return x;
  };

  GeneratedData data;
  for (const auto& ds : s.datasets) {
    std::vector<AtomId> pool = ds.atoms;
    if (pool.empty()) {
      for (AtomId a = 0; a < num_atoms; ++a) pool.push_back(a);
    }
    auto& out = data.train[ds.name];
    for (std::size_t i = 0; i < ds.samples; ++i) {
      // Cycle through the pool so every dataset is class-balanced.
      const AtomId atom = pool[i % pool.size()];
      out.push_back({draw(atom), s.taxonomy.label_of_atom(ds.name, atom), atom});
    }
  }
  for (std::size_t i = 0; i < s.heldout_per_atom; ++i) {
    for (AtomId a = 0; a < num_atoms; ++a) {
      data.heldout.push_back({draw(a), 0, a});
    }
  }
  return data;
}

// logits = W^T x + b, W is d x A.
struct LinearModel {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  static LinearModel zeros(std::size_t dim, std::size_t atoms) {
    return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim),
                                  static_cast<Eigen::Index>(atoms)),
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(atoms))};
  }

  Eigen::VectorXd logits(const Eigen::VectorXd& x) const {
    return weight.transpose() * x + bias;
  }
};

struct Gradient {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;
};

struct BatchItem {
  const Sample* sample;
  const std::vector<AtomId>* group;
};

// Mean group-sum cross-entropy over the batch plus 0.5 * decay * |W|^2.
inline double batch_loss(const LinearModel& m, std::span<const BatchItem> batch,
                         double decay) {
  double loss = 0.0;
  for (const auto& item : batch) {
    const Eigen::VectorXd z = m.logits(item.sample->x);
    loss += group_log_loss(std::span<const double>(z.data(), z.size()),
                           *item.group);
  }
  return loss / static_cast<double>(batch.size()) +
         0.5 * decay * m.weight.squaredNorm();
}

inline Gradient batch_gradient(const LinearModel& m,
                               std::span<const BatchItem> batch, double decay) {
  Gradient g{Eigen::MatrixXd::Zero(m.weight.rows(), m.weight.cols()),
             Eigen::VectorXd::Zero(m.bias.size())};
  for (const auto& item : batch) {
    const Eigen::VectorXd z = m.logits(item.sample->x);
    const auto sigma = softmax(std::span<const double>(z.data(), z.size()));
    const auto dz = grad_logits(sigma, *item.group);
    const Eigen::Map<const Eigen::VectorXd> dlogits(
        dz.data(), static_cast<Eigen::Index>(dz.size()));
    g.weight += item.sample->x * dlogits.transpose();
    g.bias += dlogits;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  g.weight *= inv;
  g.bias *= inv;
  g.weight += decay * m.weight;
  return g;
}

// Max |analytic - central difference| over every parameter.
inline double parameter_gradcheck(const LinearModel& m,
                                  std::span<const BatchItem> batch,
                                  double decay, double eps) {
  const Gradient analytic = batch_gradient(m, batch, decay);
  LinearModel probe = m;
  double worst = 0.0;
  auto check = [&](double& param, double expected) {
    const double saved = param;
    param = saved + eps;
    const double up = batch_loss(probe, batch, decay);
    param = saved - eps;
    const double down = batch_loss(probe, batch, decay);
    param = saved;
    worst = std::max(worst, std::abs((up - down) / (2.0 * eps) - expected));
  };
  for (Eigen::Index r = 0; r < probe.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < probe.weight.cols(); ++c) {
      check(probe.weight(r, c), analytic.weight(r, c));
    }
  }
  for (Eigen::Index c = 0; c < probe.bias.size(); ++c) {
    check(probe.bias[c], analytic.bias[c]);
  }
  return worst;
}

struct TrainResult {
  LinearModel model;
  std::vector<double> loss_curve;  // batch loss before each update
  std::vector<std::pair<std::size_t, double>> gradcheck;  // (step, residual)
};

// SGD with momentum on the group-sum cross-entropy. Every step draws
// `batch` consecutive samples from each dataset (own cursor, wrapping).
inline TrainResult train(LinearModel model, const GeneratedData& data,
                         const AtomTaxonomy& taxonomy,
                         std::span<const DatasetConfig> datasets,
                         const TrainOptions& opts) {
  if (!(opts.learning_rate >= 0.0)) {
    throw ValidationError("train: learning rate must be >= 0");
  }
  struct Source {
    const std::vector<Sample>* samples;
    const LabelSpace* space;
    std::size_t batch;
    std::size_t cursor = 0;
  };
  std::vector<Source> sources;
  for (const auto& ds : datasets) {
    auto it = data.train.find(ds.name);
    if (it == data.train.end() || it->second.empty() || ds.batch == 0) continue;
    sources.push_back({&it->second, &taxonomy.dataset(ds.name), ds.batch});
  }
  if (sources.empty()) throw ValidationError("train: no training samples");

  TrainResult result;
  Eigen::MatrixXd vel_w = Eigen::MatrixXd::Zero(model.weight.rows(),
                                                model.weight.cols());
  Eigen::VectorXd vel_b = Eigen::VectorXd::Zero(model.bias.size());
  std::vector<BatchItem> batch;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    batch.clear();
    for (auto& src : sources) {
      for (std::size_t i = 0; i < src.batch; ++i) {
        const Sample& s = (*src.samples)[src.cursor];
        src.cursor = (src.cursor + 1) % src.samples->size();
        batch.push_back({&s, &src.space->groups[s.label]});
      }
    }
    const double loss = batch_loss(model, batch, opts.decay);
    if (!std::isfinite(loss)) {
      throw NumericError("train: loss diverged at step " + std::to_string(step));
    }
    result.loss_curve.push_back(loss);
    if (opts.gradcheck_every && step % opts.gradcheck_every == 0) {
      result.gradcheck.emplace_back(
          step, parameter_gradcheck(model, batch, opts.decay,
                                    opts.gradcheck_epsilon));
    }
    const Gradient g = batch_gradient(model, batch, opts.decay);
    vel_w = opts.momentum * vel_w - opts.learning_rate * g.weight;
    vel_b = opts.momentum * vel_b - opts.learning_rate * g.bias;
    model.weight += vel_w;
    model.bias += vel_b;
  }
  result.model = std::move(model);
  return result;
}

struct EvalReport {
  double atom_accuracy = 0.0;
  std::map<std::string, double> label_accuracy;
  std::vector<double> atom_iou;
  std::vector<bool> atom_iou_valid;
  double knowledgeability = 0.0;  // c = A, n_t = 10
  ConfusionMatrix atom_confusion;
};

inline std::size_t predict_atom(const LinearModel& m, const Eigen::VectorXd& x) {
  const Eigen::VectorXd z = m.logits(x);
  return argmax(std::span<const double>(z.data(), z.size()));
}

inline EvalReport evaluate(const LinearModel& model,
                           std::span<const Sample> heldout,
                           const AtomTaxonomy& taxonomy) {
  const std::size_t num_atoms = taxonomy.atom_count();
  EvalReport report;
  report.atom_confusion = ConfusionMatrix(num_atoms);
  std::map<std::string, std::size_t> label_hits;
  std::size_t hits = 0;
  for (const auto& s : heldout) {
    const Eigen::VectorXd z = model.logits(s.x);
    const auto sigma = softmax(std::span<const double>(z.data(), z.size()));
    const std::size_t pred = argmax(sigma);
    hits += pred == s.atom;
    report.atom_confusion.add(s.atom, pred);
    for (const auto& [name, space] : taxonomy.datasets()) {
      const auto labels = group_sum(sigma, space);
      label_hits[name] += argmax(labels) == taxonomy.label_of_atom(name, s.atom);
    }
  }
  const double n = heldout.empty() ? 1.0 : static_cast<double>(heldout.size());
  report.atom_accuracy = static_cast<double>(hits) / n;
  for (const auto& [name, space] : taxonomy.datasets()) {
    report.label_accuracy[name] = static_cast<double>(label_hits[name]) / n;
  }
  const auto scores = miou_mpa(report.atom_confusion);
  report.atom_iou = scores.iou.iou;
  report.atom_iou_valid = scores.iou.valid;
  report.knowledgeability = knowledgeability(scores.iou, num_atoms, 10);
  return report;
}

// ---- scenario file ---------------------------------------------------------

inline SyntheticScenario parse_scenario(const nlohmann::json& j) {
  try {
    SyntheticScenario s{parse_taxonomy(j.at("taxonomy")), {}, {}, 200, 0, {}};
    for (const auto& b : j.at("blobs")) {
      const auto mean = b.at("mean").get<std::vector<double>>();
      s.blobs.push_back({Eigen::Map<const Eigen::VectorXd>(
                             mean.data(), static_cast<Eigen::Index>(mean.size())),
                         b.value("std", 1.0)});
    }
    for (const auto& d : j.at("datasets")) {
      DatasetConfig cfg;
      cfg.name = d.at("name").get<std::string>();
      cfg.samples = d.at("samples").get<std::size_t>();
      cfg.batch = d.value("batch", std::size_t{1});
      cfg.atoms = d.value("atoms", std::vector<AtomId>{});
      s.datasets.push_back(std::move(cfg));
    }
    s.heldout_per_atom = j.value("heldout_per_atom", std::size_t{200});
    s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("train")) {
      const auto& t = j.at("train");
      s.train.learning_rate = t.value("lr", s.train.learning_rate);
      s.train.steps = t.value("steps", s.train.steps);
      s.train.momentum = t.value("momentum", s.train.momentum);
      s.train.decay = t.value("decay", s.train.decay);
      s.train.gradcheck_every = t.value("gradcheck_every", s.train.gradcheck_every);
    }
    ValidationReport report = validate_atom_properties(s.taxonomy);
    if (!report.ok()) {
      throw ValidationError("scenario taxonomy: " +
                            report.violations.front().message);
    }
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("scenario: ") + e.what());
  }
}

// Five atoms on a radius-4 circle in 2-D. "fine" folds person into void but
// separates car and truck; "coarse" merges car and truck but labels person.
inline SyntheticScenario fine_coarse_scenario(bool use_fine = true,
                                              bool use_coarse = true,
                                              std::uint64_t seed = 7) {
  const std::vector<std::string> atoms = {"void", "road", "car", "truck",
                                          "person"};
  std::map<std::string, LabelSpace> datasets;
  datasets["fine"] = {{"void", "road", "car", "truck"},
                      {{0, 4}, {1}, {2}, {3}}};
  datasets["coarse"] = {{"void", "road", "vehicle", "person"},
                        {{0}, {1}, {2, 3}, {4}}};
  SyntheticScenario s{AtomTaxonomy(atoms, datasets), {}, {}, 200, seed, {}};
  const double kPi = 3.14159265358979323846;
  for (std::size_t a = 0; a < atoms.size(); ++a) {
    const double angle = 2.0 * kPi * static_cast<double>(a) /
                         static_cast<double>(atoms.size());
    Eigen::VectorXd mean(2);
    mean << 4.0 * std::cos(angle), 4.0 * std::sin(angle);
    s.blobs.push_back({mean, 0.5});
  }
  if (use_fine) s.datasets.push_back({"fine", 500, 4, {}});
  if (use_coarse) s.datasets.push_back({"coarse", 500, 4, {}});
  s.train.learning_rate = 0.05;
  s.train.steps = 1500;
  s.train.momentum = 0.9;
  s.train.decay = 1e-4;
  return s;
}

struct RunOutcome {
  TrainResult training;
  EvalReport evaluation;
};

inline RunOutcome run(const SyntheticScenario& s) {
  const GeneratedData data = generate(s);
  TrainResult tr = train(LinearModel::zeros(s.dim(), s.taxonomy.atom_count()),
                         data, s.taxonomy, s.datasets, s.train);
  EvalReport ev = evaluate(tr.model, data.heldout, s.taxonomy);
  return {std::move(tr), std::move(ev)};
}

}  // namespace hetseg::toy
