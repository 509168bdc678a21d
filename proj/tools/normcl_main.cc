// Copyright 2026 The normcl Authors
// SPDX-License-Identifier: Apache-2.0

// normcl: norm-based curriculum learning for a small transformer NMT model.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "normcl/errors.h"
#include "normcl/pipeline.h"

namespace {

using nlohmann::json;
using normcl::RunConfig;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::vector<std::string> overrides;
};

RunConfig resolve(const Globals& g, const std::string& path) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw normcl::ConfigError("cannot open config " + path);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw normcl::ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
  }
  j = normcl::apply_overrides(std::move(j), g.overrides);
  if (g.seed) j["seed"] = *g.seed;
  if (g.deterministic) j["deterministic"] = true;
  return RunConfig::from_json(j);
}

void print_json(const json& j, const std::string& path) {
  if (path.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream(path) << j.dump(2) << '\n';
}

std::string label_of(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Norm-based curriculum learning for neural machine translation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--seed", g.seed, "Run seed (overrides the config)");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, reproducible execution");
  app.add_option("--set", g.overrides, "Override a config field, e.g. --set curriculum.lambda_w=0");

  normcl::DeskTaskConfig desk;
  std::string desk_out;
  auto* generate = app.add_subcommand("generate", "Write the synthetic desk-scale translation task");
  generate->add_option("out_dir", desk_out, "Raw corpus directory")->required();
  generate->add_option("--train", desk.n_train);
  generate->add_option("--valid", desk.n_valid);
  generate->add_option("--test", desk.n_test);
  generate->add_option("--vocab", desk.vocab);
  generate->add_option("--topics", desk.topics);
  generate->add_option("--min-len", desk.min_len);
  generate->add_option("--max-len", desk.max_len);
  generate->add_option("--zipf", desk.zipf);
  generate->add_flag("--reverse", desk.reverse);
  generate->add_option("--task-seed", desk.seed);

  auto* prepare = app.add_subcommand("prepare", "Tokenize, learn subword merges, build vocabularies");
  auto* embed = app.add_subcommand("embed", "Train word vectors on the source side");
  auto* score = app.add_subcommand("score", "Score sentence difficulty");

  normcl::TrainOptions train_opts;
  train_opts.quiet = false;
  auto* train = app.add_subcommand("train", "Run curriculum training");
  train->add_flag("--resume", train_opts.resume, "Continue from the run's latest checkpoint");
  train->add_option("--stop-after", train_opts.stop_after, "Stop after this step");

  std::string ckpt, test_src, test_ref, eval_out;
  auto* evaluate = app.add_subcommand("evaluate", "Decode a test set and report BLEU");
  evaluate->add_option("--checkpoint", ckpt)->required();
  evaluate->add_option("--source", test_src, "Segmented source file (default: prepared test split)");
  evaluate->add_option("--reference", test_ref, "Segmented reference file");
  evaluate->add_option("--out", eval_out, "Output directory (default: <run>/eval)");

  std::vector<std::string> others;
  normcl::CompareOptions cmp;
  std::optional<double> abs_target;
  std::string report_path;
  auto* compare = app.add_subcommand("compare", "Steps-to-target comparison over seeds");
  compare->add_option("--with", others, "Further configurations compared against --config")->required();
  compare->add_option("--seeds", cmp.seeds)->delimiter(',');
  compare->add_option("--target-fraction", cmp.target_fraction,
                      "Target as a fraction of the reference run's final accuracy");
  compare->add_option("--target", abs_target, "Absolute held-out token-accuracy target");
  compare->add_flag("!--no-bleu", cmp.evaluate_bleu, "Skip test-set decoding");
  compare->add_option("--report", report_path, "Write the JSON report here instead of stdout");

  std::uint64_t points = 21;
  double m0 = 1.0, t_max = 0.0;
  std::string dump_out;
  auto* dump = app.add_subcommand("schedule-dump", "Print the competence curve without training");
  dump->add_option("--points", points);
  dump->add_option("--m0", m0, "Initial embedding norm for norm_based");
  dump->add_option("--t-max", t_max, "Largest step for time_sqrt (default lambda_t)");
  dump->add_option("--out", dump_out, "CSV path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      normcl::generate_desk_task(desk, desk_out);
      return 0;
    }
    const RunConfig cfg = resolve(g, g.config_path);
    if (prepare->parsed()) {
      normcl::cmd_prepare(cfg);
    } else if (embed->parsed()) {
      normcl::cmd_embed(cfg);
    } else if (score->parsed()) {
      normcl::cmd_score(cfg);
    } else if (train->parsed()) {
      const auto r = normcl::cmd_train(cfg, train_opts);
      std::cerr << "wrote " << r.run_dir.string() << '\n';
    } else if (evaluate->parsed()) {
      const auto files = normcl::data_files(cfg.paths.data_dir);
      const auto out = eval_out.empty() ? normcl::run_dir(cfg) / "eval" : std::filesystem::path(eval_out);
      const auto report = normcl::cmd_evaluate(cfg, ckpt, test_src.empty() ? files.test_source : std::filesystem::path(test_src),
                                               test_ref.empty() ? files.test_target : std::filesystem::path(test_ref), out);
      std::cout << report.to_json().dump(2) << '\n';
    } else if (compare->parsed()) {
      cmp.absolute_target = abs_target;
      std::vector<std::pair<std::string, RunConfig>> configs;
      configs.emplace_back(g.config_path.empty() ? "reference" : label_of(g.config_path), cfg);
      for (const auto& path : others) configs.emplace_back(label_of(path), resolve(g, path));
      print_json(normcl::cmd_compare(configs, cmp).to_json(), report_path);
    } else if (dump->parsed()) {
      const double tm = t_max > 0.0 ? t_max : cfg.curriculum.lambda_t;
      const auto rows = normcl::cmd_schedule_dump(cfg.curriculum, m0, points, tm);
      std::ofstream file;
      if (!dump_out.empty()) file.open(dump_out);
      std::ostream& os = dump_out.empty() ? std::cout : file;
      os << (cfg.curriculum.kind == normcl::CompetenceKind::norm_based ? "m_t" : "step")
         << ",competence\n";
      os.precision(17);
      for (const auto& [x, c] : rows) os << x << ',' << c << '\n';
    }
  } catch (const normcl::Error& e) {
    std::cerr << "normcl: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
