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

// hetseg: command-line front end. Every command prints one JSON document on
// stdout ({command, arguments, wall_time, result, warnings}, or just the
// result with --quiet) and reports diagnostics on stderr.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hetseg/conversion.hpp"
#include "hetseg/data_selection.hpp"
#include "hetseg/error.hpp"
#include "hetseg/metrics.hpp"
#include "hetseg/panoptic_uid.hpp"
#include "hetseg/raster.hpp"
#include "hetseg/taxonomy.hpp"
#include "hetseg/toy_trainer.hpp"
#include "hetseg/weak_supervision.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  Outcome() = default;
  Outcome(json r, std::vector<std::string> w = {}, int code = 0)
      : result(std::move(r)), warnings(std::move(w)), exit_code(code) {}

  json result;
  std::vector<std::string> warnings;
  int exit_code = 0;
};

using Handler = std::function<Outcome()>;

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(item);
  return out;
}

std::pair<std::size_t, std::size_t> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    std::size_t used = 0;
    const auto w = std::stoul(s.substr(0, x), &used);
    if (used != x) throw std::invalid_argument(s);
    const auto h = std::stoul(s.substr(x + 1), &used);
    if (used != s.size() - x - 1) throw std::invalid_argument(s);
    return {w, h};
  } catch (const std::exception&) {
    throw hetseg::Error(hetseg::ErrorKind::kUsage,
                        "--size expects WxH, got '" + s + "'");
  }
}

std::vector<std::int64_t> parse_int_list(const std::string& s,
                                         const char* what) {
  std::vector<std::int64_t> out;
  for (const auto& item : split(s, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw hetseg::Error(hetseg::ErrorKind::kUsage,
                          std::string(what) + ": bad integer '" + item + "'");
    }
  }
  return out;
}

// Files with the given extension, sorted by name.
std::vector<std::string> list_files(const fs::path& dir,
                                    const std::string& ext) {
  if (!fs::is_directory(dir)) {
    throw hetseg::IoError("'" + dir.string() + "' is not a directory");
  }
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) {
      names.push_back(entry.path().filename().string());
    }
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) {
    throw hetseg::IoError("no " + ext + " files in '" + dir.string() + "'");
  }
  return names;
}

fs::path paired(const fs::path& dir, const std::string& name) {
  fs::path p = dir / name;
  if (!fs::exists(p)) {
    throw hetseg::IoError("missing prediction '" + p.string() + "'");
  }
  return p;
}

json optional_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw hetseg::IoError("cannot open '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw hetseg::IoError("write failed for '" + path.string() + "'");
}

// ---- taxonomy / raster / convert / gradcheck -------------------------------

void add_taxonomy(CLI::App& app, Handler& handler) {
  auto* tax = app.add_subcommand("taxonomy", "Taxonomy tools");
  tax->require_subcommand(1);
  auto* validate = tax->add_subcommand("validate", "Check atom properties");
  static std::string file;
  validate->add_option("file", file, "Taxonomy JSON")->required();
  validate->callback([&handler] {
    handler = [] {
      const auto taxonomy = hetseg::read_taxonomy(file);
      const auto report = hetseg::validate_atom_properties(taxonomy);
      Outcome out{hetseg::to_json(report), {}, report.ok() ? 0 : 2};
      for (const auto& w : report.warnings) out.warnings.push_back(w.message);
      return out;
    };
  });
}

void add_raster(CLI::App& app, Handler& handler) {
  auto* raster = app.add_subcommand("raster", "Raster tools");
  raster->require_subcommand(1);
  auto* info = raster->add_subcommand("info", "Print format, size, channels");
  static std::string file;
  info->add_option("file", file, "Raster file")->required();
  info->callback([&handler] {
    handler = [] {
      Outcome out;
      const auto fmt = hetseg::sniff_format(file);
      json r = {{"format", hetseg::format_name(fmt)}};
      switch (fmt) {
        case hetseg::RasterFormat::kPgm16: {
          const auto img = hetseg::read_pgm16(fs::path(file));
          const auto mx = img.data.empty()
                              ? 0
                              : *std::max_element(img.data.begin(),
                                                  img.data.end());
          r.update({{"width", img.width}, {"height", img.height},
                    {"channels", 1}, {"max_value", mx}});
          break;
        }
        case hetseg::RasterFormat::kUir32: {
          const auto img = hetseg::read_uir32(fs::path(file));
          const auto mx = img.data.empty()
                              ? 0u
                              : *std::max_element(img.data.begin(),
                                                  img.data.end());
          r.update({{"width", img.width}, {"height", img.height},
                    {"channels", 1}, {"max_value", mx}});
          break;
        }
        case hetseg::RasterFormat::kPrb: {
          auto load = hetseg::read_prb(fs::path(file));
          r.update({{"width", load.raster.width},
                    {"height", load.raster.height},
                    {"channels", load.raster.channels},
                    {"max_normalization_error",
                     hetseg::max_normalization_error(load.raster, nullptr)}});
          out.warnings = std::move(load.warnings);
          break;
        }
      }
      out.result = std::move(r);
      return out;
    };
  });
}

void add_convert(CLI::App& app, Handler& handler) {
  auto* convert = app.add_subcommand("convert", "Label-space conversion");
  convert->require_subcommand(1);
  auto* probs = convert->add_subcommand(
      "probs", "Sum atom probabilities into a dataset's labels");
  static std::string taxonomy, dataset, in, out_path;
  probs->add_option("--taxonomy", taxonomy, "Taxonomy JSON")->required();
  probs->add_option("--dataset", dataset, "Target dataset")->required();
  probs->add_option("--in", in, "Atom probabilities (.prb)")->required();
  probs->add_option("--out", out_path, "Label probabilities (.prb)")->required();
  probs->callback([&handler] {
    handler = [] {
      const auto tax = hetseg::load_taxonomy(taxonomy);
      auto load = hetseg::read_prb(fs::path(in));
      const auto labels = hetseg::group_sum(load.raster, tax.dataset(dataset));
      hetseg::write_prb(fs::path(out_path), labels);
      return Outcome{{{"dataset", dataset},
                      {"width", labels.width},
                      {"height", labels.height},
                      {"atoms", load.raster.channels},
                      {"labels", labels.channels},
                      {"out", out_path}},
                     std::move(load.warnings)};
    };
  });
}

void add_gradcheck(CLI::App& app, Handler& handler) {
  auto* cmd = app.add_subcommand(
      "gradcheck", "Compare the analytic loss gradient with finite differences");
  static std::size_t atoms = 32, trials = 1000;
  static double eps = 1e-5, tolerance = 1e-6;
  static std::uint64_t seed = 0;
  cmd->add_option("--atoms", atoms, "Maximum atom count")
      ->check(CLI::Range(std::size_t{1}, std::size_t{4096}));
  cmd->add_option("--trials", trials, "Random cases");
  cmd->add_option("--eps", eps, "Central-difference step")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--tolerance", tolerance, "Failure threshold");
  cmd->add_option("--seed", seed, "RNG seed");
  cmd->callback([&handler] {
    handler = [] {
      std::mt19937_64 rng(seed);
      std::normal_distribution<double> normal(0.0, 3.0);
      double worst = 0.0;
      for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t a = 1 + rng() % atoms;
        std::vector<double> logits(a);
        for (auto& z : logits) z = normal(rng);
        std::vector<hetseg::AtomId> group;
        for (hetseg::AtomId m = 0; m < a; ++m) {
          if (rng() % 2) group.push_back(m);
        }
        if (group.empty()) group.push_back(static_cast<hetseg::AtomId>(rng() % a));
        worst = std::max(worst, hetseg::finite_diff_check(logits, group, eps));
      }
      const bool pass = worst < tolerance;
      return Outcome{{{"max_deviation", worst},
                      {"trials", trials},
                      {"atoms", atoms},
                      {"eps", eps},
                      {"tolerance", tolerance},
                      {"pass", pass}},
                     {},
                     pass ? 0 : 4};
    };
  });
}

// ---- pseudo ------------------------------------------------------------------

void add_pseudo(CLI::App& app, Handler& handler) {
  auto* pseudo = app.add_subcommand("pseudo", "Weak-label pseudo-labels");
  pseudo->require_subcommand(1);

  auto* gen = pseudo->add_subcommand("gen", "Rasterize box/tag votes");
  static std::string annots, size, gen_out;
  static std::size_t labels = 0;
  gen->add_option("--annots", annots, "Annotations (JSON lines)")->required();
  gen->add_option("--labels", labels, "Label count L (channel 0 = unlabeled)")
      ->required();
  gen->add_option("--size", size, "WxH")->required();
  gen->add_option("--out", gen_out, "Output .prb")->required();
  gen->callback([&handler] {
    handler = [] {
      const auto [w, h] = parse_size(size);
      const auto list = hetseg::read_annotations(fs::path(annots));
      const auto raster = hetseg::rasterize_votes(list, labels, w, h);
      hetseg::write_prb(fs::path(gen_out), raster);
      return Outcome{{{"annotations", list.size()},
                      {"width", w},
                      {"height", h},
                      {"labels", labels},
                      {"labeled_pixels", hetseg::count_labeled(raster)},
                      {"out", gen_out}}};
    };
  });

  auto* refine = pseudo->add_subcommand(
      "refine", "Keep pseudo-labels the prediction confidently agrees with");
  static std::string pseudo_in, pred_in, refine_out;
  static double threshold = 0.9;
  refine->add_option("--pseudo", pseudo_in, "Pseudo-label .prb")->required();
  refine->add_option("--pred", pred_in, "Prediction .prb")->required();
  refine->add_option("--threshold", threshold, "Confidence threshold");
  refine->add_option("--out", refine_out, "Output .prb")->required();
  refine->callback([&handler] {
    handler = [] {
      auto p = hetseg::read_prb(fs::path(pseudo_in));
      auto q = hetseg::read_prb(fs::path(pred_in));
      const auto r = hetseg::refine(p.raster, q.raster, threshold);
      hetseg::write_prb(fs::path(refine_out), r);
      Outcome out{{{"threshold", threshold},
                   {"labeled_before", hetseg::count_labeled(p.raster)},
                   {"labeled_after", hetseg::count_labeled(r)},
                   {"out", refine_out}}};
      for (auto* w : {&p.warnings, &q.warnings}) {
        out.warnings.insert(out.warnings.end(), w->begin(), w->end());
      }
      return out;
    };
  });
}

// ---- eval ----------------------------------------------------------------------

void add_eval(CLI::App& app, Handler& handler) {
  auto* eval = app.add_subcommand("eval", "Evaluation metrics");
  eval->require_subcommand(1);

  auto* semseg = eval->add_subcommand("semseg", "mIoU, mPA, knowledgeability");
  static std::string gt_dir, pred_dir, ignore, know;
  static std::size_t labels = 0;
  semseg->add_option("--gt", gt_dir, "Directory of ground-truth .pgm")
      ->required();
  semseg->add_option("--pred", pred_dir, "Directory of predicted .pgm")
      ->required();
  semseg->add_option("--labels", labels, "Label count L")->required();
  semseg->add_option("--ignore", ignore, "Comma-separated ignored labels");
  semseg->add_option("--knowledgeability", know, "c=<int>,nt=<int>");
  semseg->callback([&handler] {
    handler = [] {
      std::set<std::uint16_t> ignored;
      if (!ignore.empty()) {
        for (auto v : parse_int_list(ignore, "--ignore")) {
          if (v < 0 || v > 65535) {
            throw hetseg::Error(hetseg::ErrorKind::kUsage,
                                "--ignore: label out of range");
          }
          ignored.insert(static_cast<std::uint16_t>(v));
        }
      }
      std::size_t c = 0, nt = 10;
      if (!know.empty()) {
        for (const auto& kv : split(know, ',')) {
          const auto eq = kv.find('=');
          const auto key = kv.substr(0, eq);
          const auto vals = parse_int_list(
              eq == std::string::npos ? "" : kv.substr(eq + 1),
              "--knowledgeability");
          if (vals.size() != 1 || vals[0] < 1 || (key != "c" && key != "nt")) {
            throw hetseg::Error(hetseg::ErrorKind::kUsage,
                                "--knowledgeability expects c=<n>,nt=<n>");
          }
          (key == "c" ? c : nt) = static_cast<std::size_t>(vals[0]);
        }
        if (c == 0) {
          throw hetseg::Error(hetseg::ErrorKind::kUsage,
                              "--knowledgeability needs c=<n>");
        }
      }
      hetseg::ConfusionMatrix cm(labels);
      const auto names = list_files(gt_dir, ".pgm");
      for (const auto& name : names) {
        const auto gt = hetseg::read_pgm16(fs::path(gt_dir) / name);
        const auto pred = hetseg::read_pgm16(paired(pred_dir, name));
        cm += hetseg::confusion_matrix(gt, pred, labels, ignored);
      }
      const auto scores = hetseg::miou_mpa(cm, ignored);
      json per_class = json::array();
      for (std::size_t k = 0; k < labels; ++k) {
        per_class.push_back(scores.iou.valid[k] ? json(scores.iou.iou[k])
                                                : json(nullptr));
      }
      json result = {{"images", names.size()},
                     {"per_class_iou", per_class},
                     {"miou", optional_json(scores.miou)},
                     {"mpa", optional_json(scores.mpa)},
                     {"knowledgeability", nullptr}};
      if (c) {
        result["knowledgeability"] = hetseg::knowledgeability(scores.iou, c, nt);
      }
      Outcome o{std::move(result)};
      if (!scores.miou) o.warnings.push_back("no evaluable class: miou is null");
      return o;
    };
  });

  auto* partpq = eval->add_subcommand("partpq", "PQ and part-aware PQ");
  static std::string pgt_dir, ppred_dir, spec_file;
  partpq->add_option("--gt", pgt_dir, "Directory of ground-truth .uir")
      ->required();
  partpq->add_option("--pred", ppred_dir, "Directory of predicted .uir")
      ->required();
  partpq->add_option("--spec", spec_file, "Parts spec JSON")->required();
  partpq->callback([&handler] {
    handler = [] {
      const auto spec =
          hetseg::parse_parts_spec(hetseg::read_json_file(spec_file));
      hetseg::PqStats pq, ppq;
      hetseg::PartIouAccumulator parts(spec);
      const auto names = list_files(pgt_dir, ".uir");
      for (const auto& name : names) {
        const auto gt = hetseg::read_uir32(fs::path(pgt_dir) / name);
        const auto pred = hetseg::read_uir32(paired(ppred_dir, name));
        const auto r = hetseg::evaluate_panoptic(
            hetseg::segments_from_uids(gt), hetseg::segments_from_uids(pred),
            spec.parts, spec.void_ids);
        pq += r.pq;
        ppq += r.part_pq;
        parts.add(gt, pred);
      }
      json per_class = json::object();
      for (const auto& [sid, st] : pq.per_class) {
        if (!st.present()) continue;
        const auto& pst = ppq.per_class[sid];
        per_class[std::to_string(sid)] = {{"tp", st.tp},
                                          {"fp", st.fp},
                                          {"fn", st.fn},
                                          {"pq", st.quality()},
                                          {"part_pq", pst.quality()}};
      }
      json part_iou = json::object();
      for (const auto& [sid, v] : parts.result()) {
        part_iou[std::to_string(sid)] = v;
      }
      return Outcome{{{"images", names.size()},
                      {"pq", pq.value()},
                      {"part_pq", ppq.value()},
                      {"per_class", per_class},
                      {"part_iou", part_iou}}};
    };
  });

  auto* impact = eval->add_subcommand("impact", "Artifact impact in percent");
  static double none = 0, low = 0, high = 0;
  impact->add_option("--none", none, "mIoU without artifact")->required();
  impact->add_option("--low", low, "mIoU at low severity")->required();
  impact->add_option("--high", high, "mIoU at high severity")->required();
  impact->callback([&handler] {
    handler = [] {
      return Outcome{{{"impact", hetseg::impact(none, low, high)}}};
    };
  });
}

// ---- uid ---------------------------------------------------------------------

json uid_json(const hetseg::Uid& uid) {
  return {{"semantic", uid.semantic},
          {"instance", uid.instance ? json(*uid.instance) : json(nullptr)},
          {"part", uid.part ? json(*uid.part) : json(nullptr)}};
}

void add_uid(CLI::App& app, Handler& handler) {
  auto* uid = app.add_subcommand("uid", "Panoptic-parts id codec");
  uid->require_subcommand(1);

  auto* enc = uid->add_subcommand("encode", "sid [iid [pid]] -> uid");
  static std::vector<std::uint32_t> levels;
  enc->add_option("ids", levels, "Semantic, instance and part ids")
      ->required()
      ->expected(1, 3);
  enc->callback([&handler] {
    handler = [] {
      std::optional<std::uint32_t> iid, pid;
      if (levels.size() > 1) iid = levels[1];
      if (levels.size() > 2) pid = levels[2];
      return Outcome{hetseg::encode(levels[0], iid, pid)};
    };
  });

  auto* dec = uid->add_subcommand("decode", "uid -> sid, iid, pid");
  static std::uint32_t value = 0;
  dec->add_option("uid", value, "Encoded id")->required();
  dec->callback([&handler] {
    handler = [] { return Outcome{uid_json(hetseg::decode(value))}; };
  });

  auto* val = uid->add_subcommand("validate", "Check a uid raster");
  static std::string raster, spec;
  val->add_option("--raster", raster, "UIR1 raster")->required();
  val->add_option("--spec", spec, "Parts spec JSON")->required();
  val->callback([&handler] {
    handler = [] {
      const auto s = hetseg::parse_parts_spec(hetseg::read_json_file(spec));
      const auto report =
          hetseg::validate_raster(hetseg::read_uir32(fs::path(raster)), s);
      return Outcome{hetseg::to_json(report), {}, report.ok() ? 0 : 2};
    };
  });
}

// ---- select ------------------------------------------------------------------

json ranking_json(const std::vector<std::string>& ids) { return json(ids); }

void add_select(CLI::App& app, Handler& handler) {
  auto* select = app.add_subcommand("select", "Training-data selection");
  select->require_subcommand(1);

  auto* fit = select->add_subcommand("fit", "Fit a Gaussian mixture");
  static std::string features, fit_out;
  static std::size_t k = 5, sample = 0;
  static std::uint64_t seed = 0;
  static bool average = false;
  fit->add_option("--features", features, "Feature CSV")->required();
  fit->add_option("--k", k, "Components")->check(CLI::PositiveNumber);
  fit->add_option("--seed", seed, "RNG seed")->required();
  fit->add_option("--sample", sample, "Rows to subsample (0 = all)");
  fit->add_flag("--average", average, "Average rows per image id first");
  fit->add_option("--out", fit_out, "Model JSON")->required();
  fit->callback([&handler] {
    handler = [] {
      auto table = hetseg::read_features(fs::path(features));
      if (average) table = hetseg::average_rows(table);
      auto f = hetseg::fit_gmm(table, k, seed, sample);
      write_json_file(fit_out, hetseg::to_json(f.model));
      const double ll = f.log_likelihood.back();
      return Outcome{{{"k", k},
                      {"d", f.model.dim()},
                      {"rows_used", f.rows_used},
                      {"iterations", f.log_likelihood.size()},
                      {"converged", f.converged},
                      {"log_likelihood", ll},
                      {"bic", hetseg::bic(f.model, f.rows_used, ll)},
                      {"out", fit_out}},
                     std::move(f.warnings)};
    };
  });

  auto* rank = select->add_subcommand("rank", "Rank images by model density");
  static std::string model, rank_features, rank_out;
  rank->add_option("--model", model, "Model JSON")->required();
  rank->add_option("--features", rank_features, "Feature CSV")->required();
  rank->add_option("--out", rank_out, "Ranking CSV")->required();
  rank->callback([&handler] {
    handler = [] {
      const auto gmm = hetseg::gmm_from_json(hetseg::read_json_file(model));
      const auto table = hetseg::read_features(fs::path(rank_features));
      const auto ranking = hetseg::rank_by_similarity(gmm, table);
      std::ofstream out(rank_out);
      if (!out) throw hetseg::IoError("cannot open '" + rank_out + "'");
      hetseg::write_ranking(out, ranking);
      json top = json::array();
      for (std::size_t i = 0; i < std::min<std::size_t>(10, ranking.size());
           ++i) {
        top.push_back({{"image_id", ranking[i].image_id},
                       {"score", ranking[i].score}});
      }
      return Outcome{
          {{"images", ranking.size()}, {"top", top}, {"out", rank_out}}};
    };
  });

  auto* score = select->add_subcommand("score", "Diversity score per image");
  static std::string counts, weights = "100,10,1", score_out;
  score->add_option("--counts", counts, "Counts CSV")->required();
  score->add_option("--weights", weights, "Comma-separated weights");
  score->add_option("--out", score_out, "Ranking CSV");
  score->callback([&handler] {
    handler = [] {
      const auto w = parse_int_list(weights, "--weights");
      std::ifstream in(counts);
      if (!in) throw hetseg::IoError("cannot open '" + counts + "'");
      hetseg::Ranking ranking;
      for (const auto& [id, c] : hetseg::read_counts(in)) {
        ranking.push_back({id, static_cast<double>(
                                   hetseg::diversity_score(c, w))});
      }
      hetseg::sort_ranking(ranking);
      if (!score_out.empty()) {
        std::ofstream out(score_out);
        if (!out) throw hetseg::IoError("cannot open '" + score_out + "'");
        hetseg::write_ranking(out, ranking);
      }
      json scores = json::array();
      for (const auto& e : ranking) {
        scores.push_back({{"image_id", e.image_id},
                          {"score", static_cast<std::int64_t>(e.score)}});
      }
      return Outcome{{{"weights", w}, {"scores", scores}}};
    };
  });

  auto* merge = select->add_subcommand("merge", "Interleave two rankings");
  static std::string a, b, merge_out;
  static std::size_t n = 0;
  merge->add_option("--a", a, "First ranking CSV")->required();
  merge->add_option("--b", b, "Second ranking CSV")->required();
  merge->add_option("--n", n, "Images to select")->required();
  merge->add_option("--out", merge_out, "Selected ids, one per line");
  merge->callback([&handler] {
    handler = [] {
      const auto ids = hetseg::interleave_merge(
          hetseg::read_ranking(fs::path(a)), hetseg::read_ranking(fs::path(b)),
          n);
      if (!merge_out.empty()) {
        std::ofstream out(merge_out);
        if (!out) throw hetseg::IoError("cannot open '" + merge_out + "'");
        for (const auto& id : ids) out << id << '\n';
      }
      Outcome o{{{"selected", ranking_json(ids)}, {"count", ids.size()}}};
      if (ids.size() < n) {
        o.warnings.push_back("only " + std::to_string(ids.size()) +
                             " distinct ids available");
      }
      return o;
    };
  });
}

// ---- toy ---------------------------------------------------------------------

void add_toy(CLI::App& app, Handler& handler) {
  auto* toy = app.add_subcommand("toy", "Synthetic multi-dataset training");
  toy->require_subcommand(1);
  auto* run = toy->add_subcommand("run", "Train and evaluate a scenario");
  static std::string scenario, preset, out_path;
  auto* scen = run->add_option("--scenario", scenario, "Scenario JSON");
  run->add_option("--preset", preset, "Built-in scenario")
      ->check(CLI::IsMember({"fine-coarse", "fine-only", "coarse-only"}))
      ->excludes(scen);
  run->add_option("--out", out_path, "Full report JSON");
  run->callback([&handler] {
    handler = [] {
      if (scenario.empty() && preset.empty()) {
        throw hetseg::Error(hetseg::ErrorKind::kUsage,
                            "one of --scenario or --preset is required");
      }
      hetseg::toy::SyntheticScenario s =
          !scenario.empty()
              ? hetseg::toy::parse_scenario(hetseg::read_json_file(scenario))
              : hetseg::toy::fine_coarse_scenario(preset != "coarse-only",
                                                  preset != "fine-only");
      const auto outcome = hetseg::toy::run(s);
      const auto& ev = outcome.evaluation;
      json gradcheck = json::array();
      double worst = 0.0;
      for (const auto& [step, residual] : outcome.training.gradcheck) {
        gradcheck.push_back({{"step", step}, {"residual", residual}});
        worst = std::max(worst, residual);
      }
      json atom_iou = json::array();
      for (std::size_t a = 0; a < ev.atom_iou.size(); ++a) {
        atom_iou.push_back(ev.atom_iou_valid[a] ? json(ev.atom_iou[a])
                                                : json(nullptr));
      }
      const auto& curve = outcome.training.loss_curve;
      json summary = {{"steps", curve.size()},
                      {"initial_loss", curve.empty() ? 0.0 : curve.front()},
                      {"final_loss", curve.empty() ? 0.0 : curve.back()},
                      {"atom_accuracy", ev.atom_accuracy},
                      {"label_accuracy", ev.label_accuracy},
                      {"atom_iou", atom_iou},
                      {"knowledgeability", ev.knowledgeability},
                      {"max_gradcheck_residual", worst}};
      if (!out_path.empty()) {
        json full = summary;
        full["loss_curve"] = curve;
        full["gradcheck"] = gradcheck;
        write_json_file(out_path, full);
        summary["out"] = out_path;
      }
      Outcome o{std::move(summary)};
      if (worst >= 1e-5) {
        o.warnings.push_back("gradient check residual above 1e-5");
      }
      return o;
    };
  });
}

// 0 means auto; everything here runs on one thread regardless.
void check_threads_env() {
  const char* v = std::getenv("HETSEG_THREADS");
  if (!v || !*v) return;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 0) {
    throw hetseg::Error(hetseg::ErrorKind::kUsage,
                        std::string("HETSEG_THREADS must be a non-negative "
                                    "integer, got '") + v + "'");
  }
}

std::string command_path(const CLI::App& app) {
  std::string path;
  const CLI::App* cur = &app;
  while (true) {
    auto subs = cur->get_subcommands();
    if (subs.empty()) break;
    cur = subs.front();
    path += (path.empty() ? "" : " ") + cur->get_name();
  }
  return path;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Heterogeneous-dataset semantic segmentation toolkit", "hetseg"};
  app.require_subcommand(1);
  app.fallthrough();
  app.failure_message(CLI::FailureMessage::help);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");
  bool quiet = false;
  app.add_flag("--quiet", quiet, "Print only the result payload");

  Handler handler;
  add_taxonomy(app, handler);
  add_raster(app, handler);
  add_convert(app, handler);
  add_gradcheck(app, handler);
  add_pseudo(app, handler);
  add_eval(app, handler);
  add_uid(app, handler);
  add_select(app, handler);
  add_toy(app, handler);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const auto start = std::chrono::steady_clock::now();
  Outcome outcome;
  try {
    check_threads_env();
    outcome = handler();
  } catch (const hetseg::Error& e) {
    std::cerr << "hetseg: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::bad_alloc&) {
    std::cerr << "hetseg: out of memory\n";
    return 4;
  }
  const std::chrono::duration<double> elapsed =
      std::chrono::steady_clock::now() - start;

  for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << '\n';
  if (quiet) {
    std::cout << outcome.result.dump(2) << '\n';
  } else {
    json report = {{"command", command_path(app)},
                   {"arguments", std::vector<std::string>(argv + 1, argv + argc)},
                   {"wall_time", elapsed.count()},
                   {"result", outcome.result},
                   {"warnings", outcome.warnings}};
    std::cout << report.dump(2) << '\n';
  }
  return outcome.exit_code;
}
