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

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "hetseg/error.hpp"
#include "json.hpp"

namespace hetseg {

// Feature vectors keyed by image id; an image may own several rows.
struct FeatureTable {
  std::vector<std::string> image_ids;
  Eigen::MatrixXd values;  // rows x d

  std::size_t rows() const { return image_ids.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
};

// Element-wise mean per image; images keep first-appearance order.
inline FeatureTable average_rows(const FeatureTable& table) {
  std::vector<std::string> order;
  std::map<std::string, std::size_t> slot;
  for (const auto& id : table.image_ids) {
    if (slot.try_emplace(id, order.size()).second) order.push_back(id);
  }
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(order.size()), table.values.cols());
  std::vector<double> counts(order.size(), 0.0);
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const auto s = slot.at(table.image_ids[r]);
    sums.row(static_cast<Eigen::Index>(s)) +=
        table.values.row(static_cast<Eigen::Index>(r));
    counts[s] += 1.0;
  }
  for (std::size_t s = 0; s < order.size(); ++s) {
    sums.row(static_cast<Eigen::Index>(s)) /= counts[s];
  }
  return {std::move(order), std::move(sums)};
}

// K-component full-covariance mixture. Cholesky factors are computed once at
// construction; the model is immutable afterwards.
class GmmModel {
 public:
  GmmModel(Eigen::VectorXd weights, std::vector<Eigen::VectorXd> means,
           std::vector<Eigen::MatrixXd> covariances)
      : weights_(std::move(weights)),
        means_(std::move(means)),
        covariances_(std::move(covariances)) {
    const auto k = static_cast<std::size_t>(weights_.size());
    if (k == 0 || means_.size() != k || covariances_.size() != k) {
      throw ValidationError("gmm: inconsistent component count");
    }
    const Eigen::Index d = means_[0].size();
    if (d == 0) throw ValidationError("gmm: dimension must be >= 1");
    if (std::abs(weights_.sum() - 1.0) > 1e-9 || (weights_.array() <= 0).any()) {
      throw ValidationError("gmm: weights must be positive and sum to 1");
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (means_[c].size() != d || covariances_[c].rows() != d ||
          covariances_[c].cols() != d) {
        throw ValidationError("gmm: component " + std::to_string(c) +
                              " has wrong shape");
      }
      Eigen::LLT<Eigen::MatrixXd> llt(covariances_[c]);
      if (llt.info() != Eigen::Success) {
        throw NumericError("gmm: covariance of component " +
                           std::to_string(c) + " is not positive definite");
      }
      Eigen::MatrixXd lower = llt.matrixL();
      log_dets_.push_back(2.0 * lower.diagonal().array().log().sum());
      factors_.push_back(std::move(lower));
      log_weights_.push_back(std::log(weights_[static_cast<Eigen::Index>(c)]));
    }
  }

  std::size_t components() const { return static_cast<std::size_t>(weights_.size()); }
  std::size_t dim() const { return static_cast<std::size_t>(means_[0].size()); }
  const Eigen::VectorXd& weights() const { return weights_; }
  const std::vector<Eigen::VectorXd>& means() const { return means_; }
  const std::vector<Eigen::MatrixXd>& covariances() const { return covariances_; }

  // log(pi_k) + log N(x; mu_k, Sigma_k) for every component.
  Eigen::VectorXd component_log_densities(const Eigen::VectorXd& x) const {
    if (static_cast<std::size_t>(x.size()) != dim()) {
      throw ValidationError("gmm: feature dimension " +
                            std::to_string(x.size()) + " != " +
                            std::to_string(dim()));
    }
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    Eigen::VectorXd out(weights_.size());
    for (std::size_t c = 0; c < components(); ++c) {
      Eigen::VectorXd z = factors_[c].triangularView<Eigen::Lower>().solve(
          x - means_[c]);
      out[static_cast<Eigen::Index>(c)] =
          log_weights_[c] -
          0.5 * (static_cast<double>(dim()) * log_2pi + log_dets_[c] +
                 z.squaredNorm());
    }
    return out;
  }

  // log sum_k pi_k N(x; mu_k, Sigma_k), via log-sum-exp.
  double log_pdf(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd terms = component_log_densities(x);
    const double peak = terms.maxCoeff();
    return peak + std::log((terms.array() - peak).exp().sum());
  }

 private:
  Eigen::VectorXd weights_;
  std::vector<Eigen::VectorXd> means_;
  std::vector<Eigen::MatrixXd> covariances_;
  std::vector<Eigen::MatrixXd> factors_;
  std::vector<double> log_dets_;
  std::vector<double> log_weights_;
};

inline double log_pdf(const GmmModel& model, const Eigen::VectorXd& x) {
  return model.log_pdf(x);
}

// Posterior component probabilities for one row.
inline Eigen::VectorXd responsibilities(const GmmModel& model,
                                        const Eigen::VectorXd& x) {
  const Eigen::VectorXd terms = model.component_log_densities(x);
  return (terms.array() - model.log_pdf(x)).exp().matrix();
}

struct GmmOptions {
  double tolerance = 1e-3;  // nats, on the total log-likelihood
  std::size_t max_iterations = 500;
  double ridge = 1e-6;
};

struct GmmFit {
  GmmModel model;
  // Total log-likelihood of the rows used for fitting, one entry per E-step;
  // the returned model is the one scored by the last entry.
  std::vector<double> log_likelihood;
  std::size_t rows_used = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

namespace detail {

// 53-bit uniform double in [0, 1) from a 64-bit engine.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(unit_uniform(rng) *
                                                  static_cast<double>(n)));
}

// k-means++ seeding: first center uniform, then proportional to squared
// distance from the nearest chosen center.
inline std::vector<Eigen::VectorXd> kmeanspp(const Eigen::MatrixXd& x,
                                             std::size_t k,
                                             std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(x.rows());
  std::vector<Eigen::VectorXd> centers;
  centers.push_back(x.row(static_cast<Eigen::Index>(uniform_index(rng, n))).transpose());
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d2 =
          (x.row(static_cast<Eigen::Index>(i)).transpose() - centers.back())
              .squaredNorm();
      dist[i] = std::min(dist[i], d2);
      total += dist[i];
    }
    std::size_t pick = n - 1;
    if (total <= 0.0) {
      pick = uniform_index(rng, n);
    } else {
      double target = unit_uniform(rng) * total;
      for (std::size_t i = 0; i < n; ++i) {
        target -= dist[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.push_back(x.row(static_cast<Eigen::Index>(pick)).transpose());
  }
  return centers;
}

}  // namespace detail

// EM for a full-covariance GMM. Rows beyond `sample` (0 = all) are
// subsampled with the seeded RNG. Each M-step adds `ridge` to every
// covariance diagonal; iteration stops once the total log-likelihood changes
// by less than `tolerance` nats between consecutive E-steps.
inline GmmFit fit_gmm(const FeatureTable& table, std::size_t k,
                      std::uint64_t seed, std::size_t sample = 0,
                      const GmmOptions& opts = {}) {
  if (k == 0) throw ValidationError("gmm: K must be >= 1");
  if (table.dim() == 0) throw ValidationError("gmm: dimension must be >= 1");
  if (table.rows() < k) {
    throw ValidationError("gmm: " + std::to_string(table.rows()) +
                          " rows < K=" + std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  Eigen::MatrixXd x = table.values;
  if (sample > 0 && table.rows() > sample) {
    std::vector<std::size_t> idx(table.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < sample; ++i) {
      std::swap(idx[i], idx[i + detail::uniform_index(rng, idx.size() - i)]);
    }
    idx.resize(sample);
    std::sort(idx.begin(), idx.end());
    x.resize(static_cast<Eigen::Index>(sample), table.values.cols());
    for (std::size_t i = 0; i < sample; ++i) {
      x.row(static_cast<Eigen::Index>(i)) =
          table.values.row(static_cast<Eigen::Index>(idx[i]));
    }
  }
  if (static_cast<Eigen::Index>(k) > x.rows()) {
    throw ValidationError("gmm: sample of " + std::to_string(x.rows()) +
                          " rows < K=" + std::to_string(k));
  }
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::MatrixXd ridge =
      opts.ridge * Eigen::MatrixXd::Identity(d, d);

  std::vector<std::string> warnings;
  if (static_cast<Eigen::Index>(k) == n) {
    warnings.push_back("K equals the number of rows; the fit is degenerate");
  }

  const Eigen::VectorXd global_mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd centered = x.rowwise() - global_mean.transpose();
  const Eigen::MatrixXd global_cov =
      centered.transpose() * centered / static_cast<double>(n) + ridge;

  auto build = [&](Eigen::VectorXd w, std::vector<Eigen::VectorXd> mu,
                   std::vector<Eigen::MatrixXd> cov) {
    try {
      return GmmModel(std::move(w), std::move(mu), std::move(cov));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " despite ridge " +
                         std::to_string(opts.ridge));
    }
  };

  GmmModel model = build(
      Eigen::VectorXd::Constant(static_cast<Eigen::Index>(k), 1.0 / k),
      detail::kmeanspp(x, k, rng), std::vector<Eigen::MatrixXd>(k, global_cov));

  std::vector<double> trace;
  bool converged = false;
  Eigen::MatrixXd resp(n, static_cast<Eigen::Index>(k));
  for (std::size_t iter = 0;; ++iter) {
    // E-step
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd terms =
          model.component_log_densities(x.row(i).transpose());
      const double peak = terms.maxCoeff();
      const double lse = peak + std::log((terms.array() - peak).exp().sum());
      resp.row(i) = (terms.array() - lse).exp().transpose();
      total += lse;
    }
    if (!std::isfinite(total)) {
      throw NumericError("gmm: log-likelihood is not finite");
    }
    trace.push_back(total);
    if (trace.size() >= 2 &&
        std::abs(trace.back() - trace[trace.size() - 2]) < opts.tolerance) {
      converged = true;
      break;
    }
    if (iter >= opts.max_iterations) break;

    // M-step
    const Eigen::VectorXd nk = resp.colwise().sum().transpose();
    Eigen::VectorXd w(static_cast<Eigen::Index>(k));
    std::vector<Eigen::VectorXd> mu(k);
    std::vector<Eigen::MatrixXd> cov(k);
    for (std::size_t c = 0; c < k; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      if (!(nk[ci] > 0.0)) {
        throw NumericError("gmm: component " + std::to_string(c) +
                           " lost all responsibility");
      }
      w[ci] = nk[ci] / static_cast<double>(n);
      mu[c] = (x.transpose() * resp.col(ci)) / nk[ci];
      const Eigen::MatrixXd diff = x.rowwise() - mu[c].transpose();
      cov[c] = (diff.transpose() * resp.col(ci).asDiagonal() * diff) / nk[ci] +
               ridge;
      cov[c] = 0.5 * (cov[c] + cov[c].transpose());
    }
    w /= w.sum();
    model = build(std::move(w), std::move(mu), std::move(cov));
  }
  if (!converged) {
    warnings.push_back("EM stopped at the iteration cap before converging");
  }
  return {std::move(model), std::move(trace), static_cast<std::size_t>(n),
          converged, std::move(warnings)};
}

// BIC = log(N) * K * (d + d^2) - 2 log L.
inline double bic(std::size_t components, std::size_t dim,
                  std::size_t num_samples, double log_likelihood) {
  if (num_samples == 0) throw ValidationError("bic: N must be >= 1");
  const double free = static_cast<double>(components) *
                      (static_cast<double>(dim) + static_cast<double>(dim * dim));
  return std::log(static_cast<double>(num_samples)) * free -
         2.0 * log_likelihood;
}

inline double bic(const GmmModel& model, std::size_t num_samples,
                  double log_likelihood) {
  return bic(model.components(), model.dim(), num_samples, log_likelihood);
}

// Max log-density over the rows of one image.
inline double similarity(const GmmModel& model, const Eigen::MatrixXd& rows) {
  if (rows.rows() == 0) throw ValidationError("similarity: no rows");
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    best = std::max(best, model.log_pdf(rows.row(i).transpose()));
  }
  return best;
}

// ---- rankings --------------------------------------------------------------

struct RankEntry {
  std::string image_id;
  double score = 0.0;

  bool operator==(const RankEntry&) const = default;
};

using Ranking = std::vector<RankEntry>;

// Descending score; ties by ascending image id.
inline void sort_ranking(Ranking& ranking) {
  std::sort(ranking.begin(), ranking.end(),
            [](const RankEntry& a, const RankEntry& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.image_id < b.image_id;
            });
}

inline Ranking rank_by_similarity(const GmmModel& model,
                                  const FeatureTable& table) {
  std::map<std::string, double> best;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const double lp = model.log_pdf(
        table.values.row(static_cast<Eigen::Index>(r)).transpose());
    auto [it, inserted] = best.try_emplace(table.image_ids[r], lp);
    if (!inserted) it->second = std::max(it->second, lp);
  }
  Ranking ranking;
  for (const auto& [id, score] : best) ranking.push_back({id, score});
  sort_ranking(ranking);
  return ranking;
}

inline std::int64_t diversity_score(std::span<const std::int64_t> counts,
                                    std::span<const std::int64_t> weights) {
  if (counts.size() != weights.size()) {
    throw ValidationError("diversity_score: " + std::to_string(counts.size()) +
                          " counts vs " + std::to_string(weights.size()) +
                          " weights");
  }
  std::int64_t score = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] < 0) throw ValidationError("diversity_score: negative count");
    score += counts[i] * weights[i];
  }
  return score;
}

// Round-robin starting with `a`; an id already emitted is skipped and the
// same source advances. Stops at n ids or when both sources are exhausted.
inline std::vector<std::string> interleave_merge(const Ranking& a,
                                                 const Ranking& b,
                                                 std::size_t n) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  std::size_t ia = 0, ib = 0;
  bool from_a = true;
  auto next_from = [&](const Ranking& src, std::size_t& pos) -> bool {
    while (pos < src.size()) {
      const auto& id = src[pos++].image_id;
      if (seen.insert(id).second) {
        out.push_back(id);
        return true;
      }
    }
    return false;
  };
  while (out.size() < n && (ia < a.size() || ib < b.size())) {
    if (from_a) {
      next_from(a, ia);
    } else {
      next_from(b, ib);
    }
    from_a = !from_a;
  }
  return out;
}

// ---- file formats ----------------------------------------------------------

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) {
      field.pop_back();
    }
    std::size_t start = field.find_first_not_of(' ');
    fields.push_back(start == std::string::npos ? "" : field.substr(start));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

inline double parse_double(const std::string& s, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v)) {
    throw IoError("line " + std::to_string(line_no) + ": bad number '" + s +
                  "'");
  }
  return v;
}

inline bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// CSV rows "image_id,v1,...,vd"; a first line starting with "image_id" is a
// header.
inline FeatureTable read_features(std::istream& in) {
  FeatureTable table;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    auto fields = detail::split_csv(line);
    if (rows.empty() && table.image_ids.empty() && fields[0] == "image_id") {
      continue;
    }
    if (fields.size() < 2) {
      throw IoError("features line " + std::to_string(line_no) +
                    ": expected image_id and at least one value");
    }
    if (dim == 0) dim = fields.size() - 1;
    if (fields.size() - 1 != dim) {
      throw IoError("features line " + std::to_string(line_no) + ": " +
                    std::to_string(fields.size() - 1) + " values, expected " +
                    std::to_string(dim));
    }
    std::vector<double> row(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      row[i] = detail::parse_double(fields[i + 1], line_no);
    }
    table.image_ids.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          rows[r][c];
    }
  }
  return table;
}

inline FeatureTable read_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_features(in);
}

inline nlohmann::json to_json(const GmmModel& model) {
  nlohmann::json means = nlohmann::json::array();
  nlohmann::json covs = nlohmann::json::array();
  for (std::size_t c = 0; c < model.components(); ++c) {
    means.push_back(std::vector<double>(model.means()[c].data(),
                                        model.means()[c].data() + model.dim()));
    std::vector<double> flat;
    const auto& cov = model.covariances()[c];
    for (Eigen::Index r = 0; r < cov.rows(); ++r) {
      for (Eigen::Index q = 0; q < cov.cols(); ++q) flat.push_back(cov(r, q));
    }
    covs.push_back(flat);
  }
  return {{"k", model.components()},
          {"d", model.dim()},
          {"weights", std::vector<double>(model.weights().data(),
                                          model.weights().data() +
                                              model.components())},
          {"means", means},
          {"covariances", covs}};
}

inline GmmModel gmm_from_json(const nlohmann::json& j) {
  try {
    const auto k = j.at("k").get<std::size_t>();
    const auto d = j.at("d").get<std::size_t>();
    const auto weights = j.at("weights").get<std::vector<double>>();
    const auto means = j.at("means").get<std::vector<std::vector<double>>>();
    const auto covs = j.at("covariances").get<std::vector<std::vector<double>>>();
    if (weights.size() != k || means.size() != k || covs.size() != k) {
      throw ValidationError("gmm model: arrays disagree with k");
    }
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(
        weights.data(), static_cast<Eigen::Index>(k));
    std::vector<Eigen::VectorXd> mu;
    std::vector<Eigen::MatrixXd> cov;
    for (std::size_t c = 0; c < k; ++c) {
      if (means[c].size() != d || covs[c].size() != d * d) {
        throw ValidationError("gmm model: component " + std::to_string(c) +
                              " has wrong size");
      }
      mu.push_back(Eigen::Map<const Eigen::VectorXd>(
          means[c].data(), static_cast<Eigen::Index>(d)));
      cov.push_back(Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>(
          covs[c].data(), static_cast<Eigen::Index>(d),
          static_cast<Eigen::Index>(d)));
    }
    return GmmModel(std::move(w), std::move(mu), std::move(cov));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("gmm model: ") + e.what());
  }
}

inline void write_ranking(std::ostream& out, const Ranking& ranking) {
  out << "image_id,score\n";
  for (const auto& e : ranking) {
    out << e.image_id << ',' << detail::format_double(e.score) << '\n';
  }
}

inline Ranking read_ranking(std::istream& in) {
  Ranking ranking;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    auto fields = detail::split_csv(line);
    if (line_no == 1 && fields[0] == "image_id") continue;
    if (fields.empty() || fields[0].empty()) {
      throw IoError("ranking line " + std::to_string(line_no) +
                    ": missing image id");
    }
    double score = fields.size() > 1 && !fields[1].empty()
                       ? detail::parse_double(fields[1], line_no)
                       : 0.0;
    ranking.push_back({fields[0], score});
  }
  return ranking;
}

inline Ranking read_ranking(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return read_ranking(in);
}

// CSV rows "image_id,count1,...,countM".
inline std::vector<std::pair<std::string, std::vector<std::int64_t>>>
read_counts(std::istream& in) {
  std::vector<std::pair<std::string, std::vector<std::int64_t>>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::is_blank(line)) continue;
    auto fields = detail::split_csv(line);
    if (line_no == 1 && fields[0] == "image_id") continue;
    std::vector<std::int64_t> counts;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      char* end = nullptr;
      const long long v = std::strtoll(fields[i].c_str(), &end, 10);
      if (fields[i].empty() || end != fields[i].c_str() + fields[i].size()) {
        throw IoError("counts line " + std::to_string(line_no) +
                      ": bad integer '" + fields[i] + "'");
      }
      counts.push_back(v);
    }
    rows.emplace_back(fields[0], std::move(counts));
  }
  return rows;
}

}  // namespace hetseg
