#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "prerank/experiments.hpp"
#include "prerank/io.hpp"

using namespace prerank;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Args {
  fs::path config;
  fs::path out;
};

void add_io(CLI::App* sub, Args& a) {
  sub->add_option("config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("out", a.out, "output directory")->required();
}

Progress logger(bool quiet) {
  if (quiet) return {};
  return [](const std::string& m) { std::cerr << m << '\n'; };
}

ExperimentConfig prepare(const Args& a) {
  ExperimentConfig c = load_experiment_config(a.config);
  fs::create_directories(a.out);
  save_experiment_config(c, a.out / "config.json");
  return c;
}

void check_all(std::span<const MetricReport> reports) {
  for (const auto& r : reports) check_report(r);
}

std::string lines_of(std::span<const AttachedPurchase> attached) {
  std::string out;
  for (const auto& a : attached) out += attached_to_line(a) + '\n';
  return out;
}

json teacher_report_json(const TeacherTrainReport& r) {
  const auto bins = [](const std::vector<CalibrationBin>& v) {
    json out = json::array();
    for (const auto& b : v) out.push_back({{"predicted", b.mean_predicted}, {"observed", b.mean_observed}, {"count", b.count}});
    return out;
  };
  return {{"epoch_loss", r.epoch_loss},   {"validation_loss", r.validation_loss},
          {"best_epoch", r.best_epoch},   {"mean_pctr", r.mean_pctr},
          {"click_rate", r.click_rate},   {"ctr_deciles", bins(r.ctr_deciles)},
          {"cvr_deciles", bins(r.cvr_deciles)}};
}

void simulate(const Args& a) {
  ExperimentConfig c = prepare(a);
  c.teacher_mode = TeacherMode::kOracle;
  const World w = build_world(c);
  std::size_t exposures = 0, clicks = 0, purchases = 0, other = 0;
  for (const auto* logs : {&w.train_logs, &w.test_logs}) {
    for (const auto& log : *logs) {
      validate_log(log, w.catalog, c.data.cascade);
      exposures += log.exposures.size();
      clicks += log.clicks.size();
      purchases += log.purchases.size();
      other += log.other_scenario_purchases.size();
    }
  }
  save_catalog(w.catalog, a.out / "catalog.json");
  save_logs(w.train_logs, a.out / "train_logs.jsonl");
  save_logs(w.test_logs, a.out / "test_logs.jsonl");
  write_file(a.out / "attached_purchases.tsv", lines_of(w.attached_purchases));
  write_file(a.out / "attached_clicks.tsv", lines_of(w.attached_clicks));
  const json summary = {{"train_requests", w.train_logs.size()},
                        {"test_requests", w.test_logs.size()},
                        {"exposures", exposures},
                        {"clicks", clicks},
                        {"purchases", purchases},
                        {"other_scenario_purchases", other},
                        {"attached_purchases", w.attached_purchases.size()},
                        {"attached_clicks", w.attached_clicks.size()},
                        {"asph_triples", w.asph_triples.size()},
                        {"isph_triples", w.isph_triples.size()},
                        {"relevance_digest", w.catalog.relevance_digest()}};
  write_file(a.out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << '\n';
}

void build_samples(const Args& a) {
  const ExperimentConfig c = prepare(a);
  const World w = build_world(c);
  SampleStats stats;
  const auto samples = training_samples(w, c, &stats);
  std::size_t items = 0;
  for (const auto& s : samples) items += s.items.size();
  save_samples(samples, a.out / "samples.jsonl");
  const json summary = {{"requests", stats.requests},
                        {"emitted", stats.emitted},
                        {"skipped_no_exposure", stats.skipped_no_exposure},
                        {"rc_truncated", stats.rc_truncated},
                        {"prc_truncated", stats.prc_truncated},
                        {"items", items}};
  write_file(a.out / "sample_stats.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << '\n';
}

void train_teacher(const Args& a) {
  ExperimentConfig c = prepare(a);
  c.teacher_mode = TeacherMode::kLearned;
  World w = build_world(c);
  save_teacher(*w.teacher, a.out / "teacher.ckpt");
  write_file(a.out / "teacher_report.json", teacher_report_json(w.teacher_report).dump(2) + "\n");
  RunRecord rec;
  rec.name = "teacher";
  rec.config_digest = config_digest(c);
  rec.seed = c.seed;
  rec.epoch_loss = w.teacher_report.epoch_loss;
  rec.reports = evaluate("teacher", teacher_scorer(*w.teacher, w.catalog), w, c);
  check_all(rec.reports);
  emit_report(std::span(&rec, 1), a.out);
  std::cout << "teacher best epoch " << w.teacher_report.best_epoch << ", ASPH@" << c.eval.k_eval << " "
            << rec.metric("ASPH", c.eval.k_eval) << ", PAUC@10 " << rec.metric("PAUC@10", 10) << '\n';
}

void train_cmd(const Args& a, bool quiet) {
  const ExperimentConfig c = prepare(a);
  auto r = train(c, logger(quiet));
  check_all(r.record.reports);
  save_params(r.params, a.out / "params.ckpt");
  emit_report(std::span(&r.record, 1), a.out);
  std::cout << r.record.name << " ASPH@" << c.eval.k_eval << " " << r.record.metric("ASPH", c.eval.k_eval)
            << ", PAUC@10 " << r.record.metric("PAUC@10", 10) << '\n';
}

void train_baseline_cmd(const Args& a, bool quiet) {
  ExperimentConfig c = prepare(a);
  if (c.strategy == Strategy::kOneModel) c.strategy = Strategy::kCtrXCvr;
  auto r = train_baseline(c, logger(quiet));
  check_all(r.record.reports);
  save_baseline(r.params, a.out / "baseline");
  emit_report(std::span(&r.record, 1), a.out);
  std::cout << r.record.name << " ASPH@" << c.eval.k_eval << " " << r.record.metric("ASPH", c.eval.k_eval)
            << ", PAUC@10 " << r.record.metric("PAUC@10", 10) << '\n';
}

// Scorer for a saved model: a params checkpoint, a baseline directory, a
// teacher checkpoint, or the word "oracle".
Scorer load_scorer(const std::string& model, const World& w) {
  if (model == "oracle") return oracle_scorer(w.catalog);
  const fs::path p(model);
  if (fs::is_directory(p)) return baseline_scorer(load_baseline(p), w.catalog);
  const auto ckpt = nn::load_checkpoint(p);
  if (ckpt.model_type == kTeacherModelType) return teacher_scorer(teacher_from_checkpoint(ckpt), w.catalog);
  return model_scorer(params_from_checkpoint(ckpt), w.catalog);
}

void evaluate_cmd(const Args& a, const std::vector<std::string>& models) {
  const ExperimentConfig c = prepare(a);
  ExperimentConfig data_only = c;
  data_only.teacher_mode = TeacherMode::kOracle;
  const World w = build_world(data_only);
  std::vector<RunRecord> records;
  for (const auto& m : models) {
    RunRecord rec;
    rec.name = fs::path(m).filename().string();
    rec.config_digest = config_digest(c);
    rec.seed = c.seed;
    rec.reports = evaluate(rec.name, load_scorer(m, w), w, c);
    check_all(rec.reports);
    std::cout << rec.name << " ASPH@" << c.eval.k_eval << " " << rec.metric("ASPH", c.eval.k_eval) << ", PAUC@10 "
              << rec.metric("PAUC@10", 10) << '\n';
    records.push_back(std::move(rec));
  }
  emit_report(records, a.out);
}

// Teacher and entire-space student ASPH curves side by side.
void curve_cmd(const Args& a, bool quiet) {
  ExperimentConfig c = prepare(a);
  c.teacher_mode = TeacherMode::kLearned;
  const World w = build_world(c);
  const auto samples = training_samples(w, c);
  auto student = train(c, w, samples, logger(quiet));
  RunRecord teacher;
  teacher.name = "teacher";
  teacher.config_digest = config_digest(c);
  teacher.seed = c.seed;
  teacher.reports = evaluate("teacher", teacher_scorer(*w.teacher, w.catalog), w, c);
  student.record.name = "student";
  check_all(teacher.reports);
  check_all(student.record.reports);
  const std::vector<RunRecord> records = {teacher, student.record};
  emit_report(records, a.out);
  std::string tsv = "k\tteacher\tstudent\n";
  const auto& ks = teacher.reports.front().ks;
  for (std::size_t k : ks) {
    tsv += std::to_string(k) + '\t' + format_double(teacher.metric("ASPH", k)) + '\t' +
           format_double(student.record.metric("ASPH", k)) + '\n';
  }
  write_file(a.out / "curve.tsv", tsv);
  std::cout << tsv;
}

void ablate_cmd(const Args& a, const std::string& suite, const std::vector<std::uint64_t>& seeds, bool quiet) {
  const ExperimentConfig c = prepare(a);
  const std::vector<std::string> suites =
      suite == "all" ? std::vector<std::string>(std::begin(kAblationSuites), std::end(kAblationSuites))
                     : std::vector<std::string>{suite};
  for (const auto& s : suites) {
    const auto r = run_ablation(s, c, seeds, logger(quiet));
    for (const auto& rec : r.records) check_all(rec.reports);
    const fs::path dir = a.out / s;
    emit_report(r.records, dir);
    const std::string tsv = ablation_to_tsv(r);
    write_file(dir / "ablation.tsv", tsv);
    std::cout << tsv << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pre-ranking experiments on a simulated marketplace"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  Args a;
  auto* sim = app.add_subcommand("simulate", "generate the marketplace and cascade logs");
  add_io(sim, a);
  auto* samples = app.add_subcommand("build-samples", "build query-level training samples");
  add_io(samples, a);
  auto* tr = app.add_subcommand("train", "train the one-model pre-ranker and evaluate it");
  add_io(tr, a);
  auto* teach = app.add_subcommand("train-teacher", "train the learned ranking teacher");
  add_io(teach, a);
  auto* base = app.add_subcommand("train-baseline", "train the CTR/CVR(/ER) baseline models");
  add_io(base, a);
  auto* ev = app.add_subcommand("evaluate", "evaluate saved models on the test split");
  add_io(ev, a);
  std::vector<std::string> models;
  ev->add_option("-m,--model", models, "params checkpoint, baseline directory, teacher checkpoint or 'oracle'")
      ->required();
  auto* cur = app.add_subcommand("curve", "teacher and student ASPH curves over the k grid");
  add_io(cur, a);
  auto* abl = app.add_subcommand("ablate", "run an ablation suite over several seeds");
  add_io(abl, a);
  std::string suite = "all";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  abl->add_option("-s,--suite", suite, "samples, labels, loss, distill, combination or all")
      ->check(CLI::IsMember({"all", "samples", "labels", "loss", "distill", "combination"}));
  abl->add_option("--seeds", seeds, "seed set (at least 5)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*sim) simulate(a);
    if (*samples) build_samples(a);
    if (*tr) train_cmd(a, quiet);
    if (*teach) train_teacher(a);
    if (*base) train_baseline_cmd(a, quiet);
    if (*ev) evaluate_cmd(a, models);
    if (*cur) curve_cmd(a, quiet);
    if (*abl) ablate_cmd(a, suite, seeds, quiet);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (e.last_good) {
      PrerankParams p = *e.last_good;
      save_params(p, a.out / "last_good.ckpt");
      std::cerr << "last good parameters written to " << (a.out / "last_good.ckpt") << '\n';
    }
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
