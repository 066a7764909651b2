// SPDX-License-Identifier: Apache-2.0
// Acceptance runner: one PASS/FAIL line per criterion.
// usage: acceptance <work_dir>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <thread>

#include "oracles.hpp"
#include "sganet/pipeline.hpp"
#include "sganet/synth.hpp"

using namespace sganet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string details;
};

struct Criterion {
  std::string name;
  double budget_s = 0;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.precision(prec);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

SampleContext random_context(std::mt19937_64& rng) {
  SampleContext ctx;
  ctx.features = oracle::random_features(rng, 3, 2, 2, 3, 3);
  ctx.candidates = scfrm::select_candidates(ctx.features, {0.8, 2, true});
  ctx.correspondences = oracle::random_correspondences(rng, 3, 4, 2);
  return ctx;
}

TrainConfig corner(double sspa, double mvga) {
  TrainConfig c;
  c.lambda_sspa = sspa;
  c.lambda_mvga = mvga;
  c.k = 2;
  return c;
}

Outcome gradient_fidelity() {
  std::mt19937_64 rng(2024);
  double worst = 0, worst_entry = 0;
  int checks = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto ctx = random_context(rng);
    const auto params = oracle::random_params(rng, 3, 3, 0.3);
    for (const auto& c : {corner(1, 0), corner(0, 1), corner(1, 2)}) {
      const auto g = grad_params(ctx, params, c);
      const auto check = oracle::check_gradient(params, g, [&](const ProjectionParamsd& p) {
        return oracle::total_loss(ctx.features, ctx.candidates, ctx.correspondences, p, c);
      });
      worst = std::max(worst, check.norm_rel);
      worst_entry = std::max(worst_entry, check.max_entry);
      ++checks;
    }
  }
  return {worst < 1e-4, std::to_string(checks) + " checks over 20 instances x 3 corners, 6 matrices; max rel err " +
                            fmt(worst) + " (max entry-wise " + fmt(worst_entry) + ")"};
}

Outcome loss_oracle() {
  std::mt19937_64 rng(77);
  double worst_sspa = 0, worst_mvga = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const auto r = oracle::random_features(rng, 3, 2, 2, 3, 3);
    const auto rep = sspa::sspa_loss(r);
    const auto want = oracle::sspa(r);
    worst_sspa = std::max({worst_sspa, std::abs(rep.l_view - want.view), std::abs(rep.l_diff - want.diff),
                           std::abs(rep.l_sspa - (want.view + want.diff))});
    const auto corr = oracle::random_correspondences(rng, 3, 4, 1 + inst % 2);
    worst_mvga = std::max(worst_mvga, std::abs(mvga::mvga_loss(r, corr) - oracle::mvga(r, corr)));
  }
  return {worst_sspa < 1e-9 && worst_mvga < 1e-9,
          "50 instances; max |sspa - oracle| " + fmt(worst_sspa) + ", max |mvga - oracle| " + fmt(worst_mvga)};
}

Outcome attention_contract() {
  std::mt19937_64 rng(5);
  double worst_sum = 0, worst_refine = 0;
  bool single_exact = true, selection_ok = true;
  for (int inst = 0; inst < 50; ++inst) {
    const int views = 2 + inst % 4;
    const auto f = oracle::random_features(rng, views, 2, 3, 4, 4);
    const auto params = oracle::random_params(rng, 4, 4, 0.4);
    const int k = 1 + inst % 3;
    const bool cyclic = inst % 2 == 0;
    const auto cands = scfrm::select_candidates(f, {0.8, k, cyclic});
    selection_ok = selection_ok && cands == oracle::select(f, 0.8, k, cyclic);
    scfrm::RefineCache<double> cache;
    const auto r = scfrm::refine(f, cands, params, {}, &cache);
    const auto want = oracle::refine(f, cands, params);
    for (int i = 0; i < views; ++i)
      for (auto m : kModalities) worst_refine = std::max(worst_refine, (r.at(i, m) - want.at(i, m)).cwiseAbs().maxCoeff());
    for (const auto& per_m : cache.weights)
      for (const auto& w : per_m) {
        worst_sum = std::max(worst_sum, std::abs(w.sum() - 1.0));
        if (w.size() == 1) single_exact = single_exact && w(0) == 1.0;
      }
  }
  // Non-cyclic two-view ring with k = 1 gives exactly one candidate per query.
  const auto f = oracle::random_features(rng, 2, 2, 2, 3, 3);
  scfrm::RefineCache<double> cache;
  scfrm::refine(f, scfrm::select_candidates(f, {0.8, 1, false}), oracle::random_params(rng, 3, 3, 0.4), {}, &cache);
  for (const auto& per_m : cache.weights)
    for (const auto& w : per_m) single_exact = single_exact && w.size() == 1 && w(0) == 1.0;
  return {worst_sum <= 1e-6 && single_exact && selection_ok && worst_refine < 1e-12,
          "max |sum w - 1| " + fmt(worst_sum) + "; single-candidate weight exact: " + (single_exact ? "yes" : "no") +
              "; brute-force selection equal: " + (selection_ok ? "yes" : "no") + "; max |refine - oracle| " +
              fmt(worst_refine)};
}

std::optional<double> ray_sphere(const Eigen::Vector3d& o, const Eigen::Vector3d& d, double r) {
  const double b = o.dot(d);
  const double disc = b * b - (o.squaredNorm() - r * r);
  if (disc < 0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  return t > 0 ? std::optional<double>(t) : std::nullopt;
}

Outcome geometric_correspondence() {
  synth::SceneSpec s;  // unit sphere, 12 views, 128 x 128
  const auto vs = synth::render_viewset(s, std::nullopt, "ring", Label::kNormal, 1);
  const auto grid = PatchGrid::for_image(s.height, s.width, 8);
  const auto corr = mvga::compute_correspondences(vs, grid);
  long total = 0, within = 0;
  for (const auto& vp : corr.pairs) {
    const auto& ci = vs.views[static_cast<std::size_t>(vp.i - 1)].camera;
    const auto& cj = vs.views[static_cast<std::size_t>(vp.j - 1)].camera;
    for (const auto& [p, q] : vp.pairs) {
      const auto c = patch_center_pixel(grid, p);
      const auto dir = ci.ray_direction(c.x() + 0.5, c.y() + 0.5);
      const auto t = ray_sphere(ci.center(), dir, 1.0);
      ++total;
      if (!t) continue;
      const auto uv = cj.project(ci.center() + *t * dir);
      if (!uv) continue;
      const int col = static_cast<int>(std::floor((*uv)(0) / grid.patch_px));
      const int row = static_cast<int>(std::floor((*uv)(1) / grid.patch_px));
      if (std::max(std::abs(row - q / grid.cols), std::abs(col - q % grid.cols)) <= 1) ++within;
    }
  }
  const double frac = total > 0 ? static_cast<double>(within) / static_cast<double>(total) : 0.0;

  // Occlusion audit: every neighbour-pair rejection labelled occluded, plus
  // wider ring offsets until 200 are collected, checked by ray casting.
  std::vector<std::pair<mvga::PatchMatch, int>> occluded;  // (match, target view)
  for (int offset = 1; offset <= 6 && occluded.size() < 200; ++offset) {
    for (int i = 0; i < 12; ++i) {
      const int j = (i + offset) % 12;
      for (int p = 0; p < grid.num_patches(); ++p) {
        const auto m = mvga::match_patch(vs.views[static_cast<std::size_t>(i)], vs.views[static_cast<std::size_t>(j)],
                                         grid, p, 0.02);
        if (m.status == mvga::MatchStatus::kOccluded) occluded.emplace_back(m, j);
      }
    }
  }
  std::mt19937_64 rng(9);
  std::shuffle(occluded.begin(), occluded.end(), rng);
  if (occluded.size() > 200) occluded.resize(200);
  int agree = 0;
  for (const auto& [m, j] : occluded) {
    const Eigen::Vector3d cj = vs.views[static_cast<std::size_t>(j)].camera.center();
    const Eigen::Vector3d to = m.world - cj;
    const auto t = ray_sphere(cj, to.normalized(), 1.0);
    const bool hidden = t && *t < to.norm() - 1e-3;
    agree += hidden ? 1 : 0;
  }
  const bool audit_ok = occluded.size() == 200 && agree == 200;
  return {frac >= 0.95 && audit_ok,
          std::to_string(within) + "/" + std::to_string(total) + " correspondences (" + fmt(100 * frac) +
              "%) within 1 patch of the analytic reprojection; occlusion audit " + std::to_string(agree) + "/" +
              std::to_string(occluded.size()) + " agree with ray casting"};
}

struct Benchmark {
  fs::path data;
  ExperimentConfig base;
};

Benchmark prepare_benchmark(const fs::path& work) {
  Benchmark b;
  b.data = work / "benchmark";
  if (!fs::exists(b.data / "dataset.json")) {
    synth::SceneSpec scene;
    synth::DatasetOptions opt;
    opt.n_normal = 1;
    opt.n_anomalous = 12;
    opt.seed = 1;
    synth::generate_dataset(scene, opt, b.data);
  }
  b.base.data = b.data;
  b.base.seed = 1;
  b.base.threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  b.base.force = true;
  return b;
}

Outcome end_to_end(const Benchmark& b, const fs::path& work) {
  auto fused = b.base;
  fused.out = work / "e2e_fused";
  const auto summary = run_train(fused);
  run_score(fused);
  const auto report_fused = run_eval(fused);

  double single[2] = {0, 0};
  const scoring::BankModalities only[2] = {scoring::BankModalities::k2DOnly, scoring::BankModalities::k3DOnly};
  for (int s = 0; s < 2; ++s) {
    auto c = b.base;
    c.out = work / ("e2e_" + scoring::bank_modalities_name(only[s]));
    c.bank = only[s];
    fs::create_directories(c.out);
    fs::copy(fused.out / "params", c.out / "params", fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    run_score(c);
    single[s] = run_eval(c).overall.i_auroc;
  }
  const double fused_auroc = report_fused.overall.i_auroc;
  const bool trend = fused_auroc >= std::max(single[0], single[1]) - 0.02;
  const bool mvga_down = summary.l_mvga_final < summary.l_mvga_init;
  const std::size_t tests = report_fused.overall.num_samples;
  return {trend && mvga_down && tests >= 12,
          std::to_string(tests) + " test samples; I-AUROC fused " + fmt(fused_auroc) + ", 2D-only " + fmt(single[0]) +
              ", 3D-only " + fmt(single[1]) + "; P-AUROC fused " + fmt(report_fused.overall.p_auroc) +
              "; L_MVGA " + fmt(summary.l_mvga_init) + " -> " + fmt(summary.l_mvga_final)};
}

Outcome ablation_parity(const Benchmark& b, const fs::path& work) {
  const std::vector<std::pair<SweepAxis, std::vector<std::string>>> expected{
      {SweepAxis::kK, {"k=2", "k=4", "k=6", "k=8", "k=10"}},
      {SweepAxis::kN, {"N=1", "N=2", "N=3", "N=4"}},
      {SweepAxis::kLosses, {"sspa", "sspa+view", "sspa+diff", "sspa+view+diff"}}};
  bool ok = true;
  std::string details;
  for (const auto& [axis, labels] : expected) {
    auto c = b.base;
    c.out = work / "sweeps";
    const auto rows = run_sweep(c, axis);
    const auto name = sweep_axis_name(axis);
    std::vector<std::string> got;
    details += name + ":";
    for (const auto& r : rows) {
      got.push_back(r.label);
      details += " " + r.label + "=" + fmt(r.report.overall.i_auroc, 3);
    }
    details += "; ";
    const auto csv = slurp(c.out / ("sweep_" + name + ".csv"));
    const auto json = read_json(c.out / ("sweep_" + name + ".json"));
    const long lines = std::count(csv.begin(), csv.end(), '\n');
    ok = ok && got == labels && lines == static_cast<long>(labels.size()) + 1 &&
         json["rows"].size() == labels.size();
  }
  return {ok, details + "I-AUROC recorded per row"};
}

Outcome metric_suite() {
  using metrics::auroc;
  bool ok = auroc(std::vector<double>{0.1, 0.9}, std::vector<int>{0, 1}) == 1.0 &&
            auroc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 1}) == 0.0 &&
            auroc(std::vector<double>{0.3, 0.3, 0.3, 0.3}, std::vector<int>{0, 1, 0, 1}) == 0.5;
  Matrixf mask = Matrixf::Zero(4, 4);
  mask.block(1, 1, 2, 2).setOnes();
  const Matrixf anti = Matrixf::Ones(4, 4) - mask;
  for (double limit : {0.3, 0.01, 1.0}) ok = ok && std::abs(metrics::aupro({mask}, {mask}, limit) - 1.0) < 1e-12;
  ok = ok && std::abs(metrics::aupro({anti}, {mask}, 1.0)) < 1e-12;
  const std::vector<std::vector<std::pair<int, int>>> regions{{{1, 1}, {1, 2}, {2, 1}, {2, 2}}};
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> level(0, 9);
  double worst = 0;
  for (int trial = 0; trial < 500; ++trial) {
    Matrixf map(4, 4);
    for (Eigen::Index e = 0; e < map.size(); ++e) map.data()[e] = static_cast<float>(level(rng)) / 9.0f;
    for (double limit : {1.0, 0.3, 0.01})
      worst = std::max(worst, std::abs(metrics::aupro({map}, {mask}, limit) -
                                       oracle::exhaustive_aupro(map, mask, regions, limit)));
  }
  // Degenerate equivalence: one-pixel regions at limit 1 reproduce AUROC.
  metrics::RegionSet set;
  std::vector<int> labels;
  for (int e = 0; e < 40; ++e) {
    set.scores.push_back(level(rng));
    labels.push_back(e % 5 == 0);
    set.region.push_back(e % 5 == 0 ? set.num_regions++ : -1);
  }
  const double eq = std::abs(metrics::aupro(set, 1.0) - auroc(set.scores, labels));
  ok = ok && worst < 1e-9 && eq < 1e-12;
  return {ok, "AUROC/AUPRO examples; 4x4 exhaustive-threshold max diff " + fmt(worst) + " over 1500 curves; " +
                  "one-pixel-region equivalence diff " + fmt(eq)};
}

Outcome determinism(const Benchmark& b, const fs::path& work) {
  std::vector<fs::path> outs;
  for (const char* tag : {"det_a", "det_b"}) {
    auto c = b.base;
    c.out = work / tag;
    run_all(c);
    outs.push_back(c.out);
  }
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::recursive_directory_iterator(outs[0])) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), outs[0]);
    const auto top = rel.begin()->string();
    const bool tracked = top == "params" || top == "bank" || top == "maps" || rel == "scores.json" ||
                         rel == "report.json" || rel == "curves.csv" || rel == "train_log.jsonl";
    if (!tracked) continue;
    ++compared;
    if (!fs::exists(outs[1] / rel) || slurp(entry.path()) != slurp(outs[1] / rel)) differing.push_back(rel.string());
  }
  std::string details = std::to_string(compared) + " artifacts compared (params, bank, maps, scores, report, log)";
  if (!differing.empty()) details += "; first difference: " + differing.front();
  return {compared > 10 && differing.empty(), details};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: acceptance <work_dir>\n";
    return 2;
  }
  const fs::path work = argv[1];
  fs::create_directories(work);
  std::optional<Benchmark> bench;
  auto benchmark = [&]() -> const Benchmark& {
    if (!bench) bench = prepare_benchmark(work);
    return *bench;
  };

  const std::vector<Criterion> criteria{
      {"gradient-fidelity", 30, gradient_fidelity},
      {"loss-oracle-equivalence", 10, loss_oracle},
      {"attention-contract", 10, attention_contract},
      {"geometric-correspondence", 60, geometric_correspondence},
      {"end-to-end-trend", 300, [&] { return end_to_end(benchmark(), work); }},
      {"ablation-harness-parity", 0, [&] { return ablation_parity(benchmark(), work); }},
      {"metric-unit-suite", 5, metric_suite},
      {"determinism", 0, [&] { return determinism(benchmark(), work); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.budget_s <= 0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::string timing = fmt(secs, 3) + " s";
    if (c.budget_s > 0) timing += " / budget " + fmt(c.budget_s, 3) + " s";
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << " (" << o.details << "; " << timing << ")" << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
