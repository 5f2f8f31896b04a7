// auxdepth: toy-scale monocular 3D detection pipeline.
// Subcommands: train, evaluate, gradcheck, synth, bev-plot.
// Exit codes: 0 success, 1 failed run or failed check, 2 usage/config error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "auxdepth/bev_plot.hpp"
#include "auxdepth/config.hpp"
#include "auxdepth/evaluator.hpp"
#include "auxdepth/gradcheck_suite.hpp"
#include "auxdepth/synth.hpp"
#include "auxdepth/trainer.hpp"

namespace fs = std::filesystem;
using namespace auxdepth;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "run-config file (key = value lines)");
  cmd->add_option("--set", opts.overrides, "override: key=value (repeatable)");
  cmd->add_option("--seed", opts.seed, "seed override")->each([&opts](const std::string&) {
    opts.seed_set = true;
  });
}

RunConfig resolve(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? config_from_overrides(opts.overrides)
                                           : load_config(opts.config_path, opts.overrides);
  if (opts.seed_set) cfg.seed = opts.seed;
  // reproducibility by transcript: the full resolved configuration first
  std::cout << "# resolved configuration\n" << resolved_config_text(cfg) << std::flush;
  set_worker_count(cfg.workers);
  return cfg;
}

template <typename S>
int run_train(const RunConfig& cfg) {
  Trainer<S> trainer(cfg);
  if (!cfg.resume.empty()) {
    trainer.resume_from(cfg.resume);
    std::cout << "resumed from " << cfg.resume << " at step " << trainer.start_step() << "\n";
  }
  fs::create_directories(cfg.out_dir);
  std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.csv",
                        trainer.start_step() > 0 ? std::ios::app : std::ios::out);
  int tick = 0;
  trainer.run(&metrics, [&](const StepLog& log) {
    if (++tick % 50 == 0 || log.step + 1 == cfg.steps)
      std::printf("step %5d  lcls %.4f  lreg %.4f  ldepth %.4f  ltotal %.4f  lr %.2e\n",
                  log.step, log.lcls, log.lreg, log.ldepth, log.ltotal, log.lr);
  });
  const std::string pred_dir = (fs::path(cfg.out_dir) / "predictions").string();
  trainer.write_predictions(pred_dir);
  std::cout << "checkpoints and metrics.csv in " << cfg.out_dir << "; predictions in "
            << pred_dir << "\n";
  const auto report = eval::evaluate_dataset(
      pred_dir, (fs::path(cfg.data_dir) / "label_2").string(), eval::EvalConfig{});
  std::cout << eval::report_text(report);
  std::ofstream(fs::path(cfg.out_dir) / "train_eval.txt") << eval::report_text(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auxdepth: depth-sensitive monocular 3D detection, desk scale"};
  app.require_subcommand(1);

  CommonOpts train_opts, grad_opts, synth_opts;
  auto* train_cmd = app.add_subcommand("train", "train on a KITTI-layout dataset");
  add_common(train_cmd, train_opts);

  auto* eval_cmd = app.add_subcommand("evaluate", "AP40 report for prediction files");
  std::string pred_dir, gt_dir, cls = "Car", metric = "both", out_csv;
  double iou = 0.7;
  eval_cmd->add_option("--pred", pred_dir, "prediction label dir")->required();
  eval_cmd->add_option("--gt", gt_dir, "ground-truth label dir")->required();
  eval_cmd->add_option("--class", cls, "class name (default Car)");
  eval_cmd->add_option("--iou", iou, "IoU threshold (default 0.7)");
  eval_cmd->add_option("--metric", metric, "ap3d | apbev | both");
  eval_cmd->add_option("--csv", out_csv, "also write the report as CSV");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient battery");
  add_common(grad_cmd, grad_opts);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic KITTI-layout dataset");
  std::string synth_out;
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  add_common(synth_cmd, synth_opts);

  auto* plot_cmd = app.add_subcommand("bev-plot", "bird's-eye-view SVG of one frame");
  std::string plot_pred, plot_gt, plot_frame, plot_out = "bev.svg";
  plot_cmd->add_option("--pred", plot_pred, "prediction label dir")->required();
  plot_cmd->add_option("--gt", plot_gt, "ground-truth label dir")->required();
  plot_cmd->add_option("--frame", plot_frame, "frame id, e.g. 000003")->required();
  plot_cmd->add_option("--out", plot_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (train_cmd->parsed()) {
      const RunConfig cfg = resolve(train_opts);
      return cfg.precision == "f64" ? run_train<double>(cfg) : run_train<float>(cfg);
    }
    if (eval_cmd->parsed()) {
      RunConfig cfg = config_from_overrides({});
      std::cout << "# resolved configuration\n" << resolved_config_text(cfg) << std::flush;
      eval::EvalConfig ecfg;
      ecfg.class_name = cls;
      ecfg.iou_threshold = iou;
      if (metric != "ap3d" && metric != "apbev" && metric != "both")
        fail(Error::Kind::Config, "--metric must be ap3d, apbev or both");
      const auto report = eval::evaluate_dataset(pred_dir, gt_dir, ecfg);
      const std::string text = eval::report_text(report);
      if (metric == "both") {
        std::cout << text;
      } else {
        std::istringstream in(text);
        std::string line;
        std::getline(in, line);
        std::cout << line << "\n";
        while (std::getline(in, line))
          if ((metric == "ap3d" && line.rfind("AP_3D", 0) == 0) ||
              (metric == "apbev" && line.rfind("AP_BEV", 0) == 0))
            std::cout << line << "\n";
      }
      if (!out_csv.empty()) {
        std::ofstream csv(out_csv);
        csv << "metric,easy,moderate,hard\n";
        char row[128];
        std::snprintf(row, sizeof(row), "ap3d,%.6f,%.6f,%.6f\n", report.ap3d[0],
                      report.ap3d[1], report.ap3d[2]);
        csv << row;
        std::snprintf(row, sizeof(row), "apbev,%.6f,%.6f,%.6f\n", report.apbev[0],
                      report.apbev[1], report.apbev[2]);
        csv << row;
      }
      return 0;
    }
    if (grad_cmd->parsed()) {
      const RunConfig cfg = resolve(grad_opts);
      const auto entries = run_gradcheck_suite(cfg.seed);
      bool all_ok = true;
      std::printf("%-26s %12s %10s  %s\n", "op", "max_rel_err", "tolerance", "status");
      for (const auto& e : entries) {
        std::printf("%-26s %12.3e %10.1e  %s\n", e.name.c_str(), e.max_rel_error,
                    e.tolerance, e.passed() ? "pass" : "FAIL");
        all_ok = all_ok && e.passed();
      }
      std::printf("%zu ops checked; %s\n", entries.size(), all_ok ? "all passed" : "FAILURES");
      return all_ok ? 0 : 1;
    }
    if (synth_cmd->parsed()) {
      const RunConfig cfg = resolve(synth_opts);
      synth::SynthConfig sc;
      sc.width = cfg.input_w;
      sc.height = cfg.input_h;
      sc.focal = cfg.synth_focal;
      sc.cx = static_cast<double>(cfg.input_w) / 2.0;
      sc.cy = static_cast<double>(cfg.input_h) * 0.3125;
      synth::write_dataset(synth_out, cfg.seed, cfg.synth_scenes, cfg.synth_min_objects,
                           cfg.synth_max_objects, sc);
      std::cout << "wrote " << cfg.synth_scenes << " scenes to " << synth_out << "\n";
      return 0;
    }
    if (plot_cmd->parsed()) {
      const auto gts = kitti::read_label_file(
          (fs::path(plot_gt) / (plot_frame + ".txt")).string());
      const auto preds = kitti::read_label_file(
          (fs::path(plot_pred) / (plot_frame + ".txt")).string());
      write_bev_plot(plot_out, gts, preds);
      std::cout << "wrote " << plot_out << "\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind == Error::Kind::Config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
