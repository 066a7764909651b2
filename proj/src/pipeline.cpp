// SPDX-License-Identifier: Apache-2.0
#include "sganet/pipeline.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

namespace sganet {

namespace fs = std::filesystem;

ExperimentConfig ExperimentConfig::resolved() const {
  ExperimentConfig c = *this;
  if (c.train_dir.empty() && !c.data.empty()) c.train_dir = c.data / "train";
  if (c.test_dir.empty() && !c.data.empty()) c.test_dir = c.data / "test";
  c.train.seed = c.seed;
  return c;
}

void ExperimentConfig::validate() const {
  if (out.empty()) throw UsageError("an output directory is required");
  if (threads < 1) throw UsageError("threads must be >= 1");
  if (!(coreset_ratio > 0.0 && coreset_ratio <= 1.0)) throw UsageError("coreset ratio must lie in (0, 1]");
  if (!(map.sigma >= 0.0)) throw UsageError("map sigma must be >= 0");
  for (double l : eval.aupro_limits) {
    if (!(l > 0.0 && l <= 1.0)) throw UsageError("aupro limits must lie in (0, 1]");
  }
  if (!(eval.voxel_size > 0.0)) throw UsageError("voxel size must be > 0");
  extractor.validate();
  train.validate();
}

namespace {

scoring::BankModalities parse_bank(const std::string& s) {
  if (s == "fused") return scoring::BankModalities::kFused;
  if (s == "2d") return scoring::BankModalities::k2DOnly;
  if (s == "3d") return scoring::BankModalities::k3DOnly;
  throw UsageError("unknown bank modality '" + s + "' (fused, 2d, 3d)");
}

void require_fresh(const fs::path& artifact, bool force) {
  if (fs::exists(artifact) && !force) {
    throw UsageError(artifact.string() + " already exists; pass --force to overwrite");
  }
}

void write_snapshot(const ExperimentConfig& c, const std::string& stage) {
  fs::create_directories(c.out);
  write_json(c.out / (stage + ".config.json"), to_json(c));
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::vector<SampleContext> prepare_all(const std::vector<ViewSet>& sets, const ExperimentConfig& c,
                                       std::vector<std::string>* warnings) {
  std::vector<SampleContext> out(sets.size());
  std::vector<Warnings> sinks(sets.size());
  parallel_for(sets.size(), c.threads,
               [&](std::size_t i) { out[i] = prepare_sample(sets[i], c.extractor, c.train, &sinks[i]); });
  for (auto& s : sinks)
    for (auto& m : s.messages) {
      std::cerr << "warning: " << m << '\n';
      warnings->push_back(std::move(m));
    }
  return out;
}

double mean_loss(const std::vector<SampleContext>& ctx, const ProjectionParamsd& params, const TrainConfig& t,
                 double LossBreakdown::*field) {
  double sum = 0.0;
  for (const auto& s : ctx) sum += total_loss(s, params, t).*field;
  return sum / static_cast<double>(ctx.size());
}

std::string limit_label(double limit) {
  std::ostringstream s;
  s << limit * 100.0;
  return s.str();
}

}  // namespace

nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"data", c.data.string()},
          {"train_dir", c.train_dir.string()},
          {"test_dir", c.test_dir.string()},
          {"out", c.out.string()},
          {"seed", c.seed},
          {"threads", c.threads},
          {"extractor", to_json(c.extractor)},
          {"train", to_json(c.train)},
          {"scoring",
           {{"coreset_ratio", c.coreset_ratio},
            {"sigma", c.map.sigma},
            {"truncate", c.map.truncate},
            {"bank", scoring::bank_modalities_name(c.bank)},
            {"pgm", c.pgm}}},
          {"eval",
           {{"aupro_limits", c.eval.aupro_limits},
            {"voxel_size", c.eval.voxel_size},
            {"point_metrics", c.eval.point_metrics}}}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig c) {
  try {
    if (j.contains("data")) c.data = j.at("data").get<std::string>();
    if (j.contains("train_dir")) c.train_dir = j.at("train_dir").get<std::string>();
    if (j.contains("test_dir")) c.test_dir = j.at("test_dir").get<std::string>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("extractor")) {
      auto merged = to_json(c.extractor);
      merged.update(j.at("extractor"));
      c.extractor = extractor_from_json(merged);
    }
    if (j.contains("train")) {
      auto merged = to_json(c.train);
      merged.update(j.at("train"));
      c.train = train_config_from_json(merged);
    }
    if (j.contains("scoring")) {
      const auto& s = j.at("scoring");
      c.coreset_ratio = s.value("coreset_ratio", c.coreset_ratio);
      c.map.sigma = s.value("sigma", c.map.sigma);
      c.map.truncate = s.value("truncate", c.map.truncate);
      if (s.contains("bank")) c.bank = parse_bank(s.at("bank").get<std::string>());
      c.pgm = s.value("pgm", c.pgm);
    }
    if (j.contains("eval")) {
      const auto& e = j.at("eval");
      c.eval.aupro_limits = e.value("aupro_limits", c.eval.aupro_limits);
      c.eval.voxel_size = e.value("voxel_size", c.eval.voxel_size);
      c.eval.point_metrics = e.value("point_metrics", c.eval.point_metrics);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("experiment config: ") + e.what());
  }
  return c;
}

std::vector<ViewSet> load_split(const fs::path& dir) {
  std::vector<ViewSet> out;
  for (const auto& p : list_samples(dir)) out.push_back(load_viewset(p));
  if (out.empty()) throw DataError("no samples under " + dir.string());
  return out;
}

nlohmann::json to_json(const TrainSummary& s) {
  return {{"l_mvga_init", s.l_mvga_init}, {"l_mvga_final", s.l_mvga_final}, {"total_init", s.total_init},
          {"total_final", s.total_final}, {"steps", s.steps},               {"optimized", s.optimized},
          {"warnings", s.warnings}};
}

TrainSummary run_train(const ExperimentConfig& config) {
  const auto c = config.resolved();
  c.validate();
  require_fresh(c.out / "params" / "params.json", c.force);
  write_snapshot(c, "train");

  std::vector<ViewSet> normals;
  TrainSummary summary;
  for (auto& vs : load_split(c.train_dir)) {
    if (vs.label == Label::kNormal) {
      normals.push_back(std::move(vs));
    } else {
      summary.warnings.push_back("skipping non-normal training sample " + vs.sample_id);
    }
  }
  if (normals.empty()) throw DataError("no normal training samples under " + c.train_dir.string());
  const auto contexts = prepare_all(normals, c, &summary.warnings);
  const auto& f0 = contexts.front().features;
  const auto init = init_params(f0.dim(Modality::k2D), f0.dim(Modality::k3D), c.train.init_noise, c.train.seed,
                                c.train.shared_params);

  ProjectionParamsd trained = init;
  std::ofstream log(c.out / "train_log.jsonl", std::ios::trunc);
  if (!log) throw DataError("cannot write train log under " + c.out.string());
  if (c.train.lambda_sspa == 0.0 && c.train.lambda_mvga == 0.0) {
    summary.optimized = false;
    summary.warnings.push_back("both loss weights are zero; parameters stay at initialization");
    std::cerr << "warning: " << summary.warnings.back() << '\n';
  } else {
    auto state = train(contexts, c.train, &log);
    trained = std::move(state.params);
    summary.steps = state.step;
  }
  save_params(c.out / "params", trained);
  // Report final losses for the parameters as stored on disk.
  const auto stored = load_params(c.out / "params");
  summary.l_mvga_init = mean_loss(contexts, init, c.train, &LossBreakdown::mvga);
  summary.l_mvga_final = mean_loss(contexts, stored, c.train, &LossBreakdown::mvga);
  summary.total_init = mean_loss(contexts, init, c.train, &LossBreakdown::total);
  summary.total_final = mean_loss(contexts, stored, c.train, &LossBreakdown::total);
  write_json(c.out / "train_summary.json", to_json(summary));
  return summary;
}

nlohmann::json run_score(const ExperimentConfig& config) {
  const auto c = config.resolved();
  c.validate();
  require_fresh(c.out / "scores.json", c.force);
  if (!fs::exists(c.out / "params" / "params.json")) {
    throw DataError("missing trained parameters under " + (c.out / "params").string() + "; run train first");
  }
  write_snapshot(c, "score");
  const auto params = load_params(c.out / "params");

  std::vector<ViewSet> normals;
  for (auto& vs : load_split(c.train_dir))
    if (vs.label == Label::kNormal) normals.push_back(std::move(vs));
  if (normals.empty()) throw DataError("no normal training samples under " + c.train_dir.string());
  std::vector<scoring::BankSource> sources(normals.size());
  parallel_for(normals.size(), c.threads, [&](std::size_t i) {
    sources[i] = {normals[i].sample_id, scoring::refine_sample(normals[i], params, c.extractor, c.train)};
  });
  const auto bank = scoring::build_bank(sources, c.coreset_ratio, c.bank);
  scoring::save_bank(c.out / "bank", bank);

  const auto tests = load_split(c.test_dir);
  std::vector<scoring::AnomalyResult> results(tests.size());
  parallel_for(tests.size(), c.threads, [&](std::size_t i) {
    results[i] = scoring::score_sample(tests[i], bank, params, c.extractor, c.train, c.map);
    scoring::save_maps(c.out / "maps" / tests[i].sample_id, results[i], c.pgm);
  });

  nlohmann::json j;
  j["bank_size"] = bank.size();
  j["bank"] = scoring::bank_modalities_name(bank.modalities);
  j["samples"] = nlohmann::json::array();
  for (std::size_t i = 0; i < tests.size(); ++i) {
    nlohmann::json views = nlohmann::json::array();
    for (const auto& v : results[i].views) views.push_back(v.score);
    j["samples"].push_back({{"sample_id", tests[i].sample_id},
                            {"category", tests[i].category},
                            {"label", label_name(tests[i].label)},
                            {"score", results[i].score},
                            {"view_scores", views}});
  }
  write_json(c.out / "scores.json", j);
  return j;
}

metrics::EvalReport run_eval(const ExperimentConfig& config) {
  const auto c = config.resolved();
  c.validate();
  require_fresh(c.out / "report.json", c.force);
  if (!fs::exists(c.out / "scores.json")) throw DataError("missing scores.json under " + c.out.string());
  write_snapshot(c, "eval");
  const auto scores = read_json(c.out / "scores.json");

  std::vector<ViewSet> tests;
  for (const auto& p : list_samples(c.test_dir)) tests.push_back(load_viewset(p));
  std::vector<metrics::EvalInput> inputs;
  for (const auto& s : scores.at("samples")) {
    const auto id = s.at("sample_id").get<std::string>();
    const auto it = std::find_if(tests.begin(), tests.end(), [&](const ViewSet& v) { return v.sample_id == id; });
    if (it == tests.end()) throw DataError("scored sample " + id + " not found under " + c.test_dir.string());
    metrics::EvalInput in;
    in.sample_id = id;
    in.category = it->category;
    in.label = it->label;
    in.score = s.at("score").get<double>();
    in.viewset = &*it;
    for (const auto& v : it->views) {
      in.maps.push_back(
          to_image_matrix(read_tensor(c.out / "maps" / id / (view_dir_name(v.view_index) + ".ft32"))));
      in.masks.push_back(v.gt_mask ? *v.gt_mask : Matrixf());
    }
    inputs.push_back(std::move(in));
  }
  auto report = metrics::evaluate(inputs, c.eval);
  write_json(c.out / "report.json", metrics::to_json(report));
  write_text(c.out / "curves.csv", metrics::curves_csv(report));
  return report;
}

metrics::EvalReport run_all(const ExperimentConfig& config) {
  run_train(config);
  run_score(config);
  return run_eval(config);
}

SweepAxis parse_sweep_axis(const std::string& name) {
  if (name == "k") return SweepAxis::kK;
  if (name == "N" || name == "n") return SweepAxis::kN;
  if (name == "losses") return SweepAxis::kLosses;
  throw UsageError("unknown sweep axis '" + name + "' (k, N, losses)");
}

std::string sweep_axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kK: return "k";
    case SweepAxis::kN: return "N";
    case SweepAxis::kLosses: return "losses";
  }
  return "k";
}

std::vector<std::pair<std::string, TrainConfig>> sweep_grid(SweepAxis axis, const TrainConfig& base) {
  std::vector<std::pair<std::string, TrainConfig>> grid;
  switch (axis) {
    case SweepAxis::kK:
      for (int k : {2, 4, 6, 8, 10}) {
        auto t = base;
        t.k = k;
        grid.emplace_back("k=" + std::to_string(k), t);
      }
      break;
    case SweepAxis::kN:
      for (int n : {1, 2, 3, 4}) {
        auto t = base;
        t.n = n;
        grid.emplace_back("N=" + std::to_string(n), t);
      }
      break;
    case SweepAxis::kLosses: {
      const std::pair<bool, bool> subsets[] = {{false, false}, {true, false}, {false, true}, {true, true}};
      for (const auto& [view, diff] : subsets) {
        auto t = base;
        t.use_view = view;
        t.use_diff = diff;
        std::string label = "sspa";
        if (view) label += "+view";
        if (diff) label += "+diff";
        grid.emplace_back(label, t);
      }
      break;
    }
  }
  return grid;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis) {
  const auto c = config.resolved();
  c.validate();
  const auto name = sweep_axis_name(axis);
  const fs::path json_path = c.out / ("sweep_" + name + ".json");
  require_fresh(json_path, c.force);
  write_snapshot(c, "sweep_" + name);

  std::vector<SweepRow> rows;
  for (const auto& [label, t] : sweep_grid(axis, c.train)) {
    auto sub = c;
    sub.train = t;
    sub.out = c.out / ("sweep_" + name) / label;
    SweepRow row{label, t, {}, {}};
    row.summary = run_train(sub);
    run_score(sub);
    row.report = run_eval(sub);
    rows.push_back(std::move(row));
  }

  nlohmann::json j;
  j["axis"] = name;
  j["rows"] = nlohmann::json::array();
  std::ostringstream csv;
  csv.precision(17);
  csv << "label,k,N,use_view,use_diff,i_auroc,p_auroc";
  for (double l : c.eval.aupro_limits) csv << ",aupro@" << limit_label(l);
  if (c.eval.point_metrics)
    for (double l : c.eval.aupro_limits) csv << ",pv_aupro@" << limit_label(l);
  csv << ",l_mvga_init,l_mvga_final\n";
  for (const auto& r : rows) {
    auto metrics_json = metrics::to_json(r.report.overall, c.eval);
    j["rows"].push_back({{"label", r.label},
                         {"k", r.train.k},
                         {"N", r.train.n},
                         {"use_view", r.train.use_view},
                         {"use_diff", r.train.use_diff},
                         {"metrics", metrics_json},
                         {"l_mvga_init", r.summary.l_mvga_init},
                         {"l_mvga_final", r.summary.l_mvga_final}});
    csv << r.label << ',' << r.train.k << ',' << r.train.n << ',' << r.train.use_view << ',' << r.train.use_diff
        << ',' << r.report.overall.i_auroc << ',' << r.report.overall.p_auroc;
    for (double l : c.eval.aupro_limits) csv << ',' << r.report.overall.aupro.at(l);
    if (c.eval.point_metrics)
      for (double l : c.eval.aupro_limits) csv << ',' << r.report.overall.pv_aupro.at(l);
    csv << ',' << r.summary.l_mvga_init << ',' << r.summary.l_mvga_final << '\n';
  }
  write_json(json_path, j);
  write_text(c.out / ("sweep_" + name + ".csv"), csv.str());
  return rows;
}

}  // namespace sganet
