#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "soat/metrics/evaluate.hpp"
#include "soat/train/train.hpp"
#include "soat/util/text.hpp"

namespace soat::cli {

namespace fs = std::filesystem;

namespace {

// The valid combinations of the three proposed modules. View aggregation
// without object features has nothing to aggregate, so those two rows are
// excluded.
struct AblateCell {
  int row;
  bool objects;
  bool aggregation;
  bool selective;
  const char* label;
};

constexpr AblateCell kCells[] = {
    {1, false, false, false, "baseline"},
    {2, true, false, false, "objects"},
    {4, false, false, true, "selective"},
    {5, true, true, false, "objects+aggregation"},
    {6, true, false, true, "objects+selective"},
    {8, true, true, true, "full"},
};

masks::MaskPattern cell_pattern(const AblateCell& cell) {
  if (cell.selective) return masks::MaskPattern::kSelectiveObject;
  return cell.objects ? masks::MaskPattern::kAllAttention : masks::MaskPattern::kBaseline;
}

struct CellOutcome {
  bool ok = false;
  std::string error;
  metrics::Aggregate unseen;
};

}  // namespace

int cmd_ablate(const std::vector<std::string>& args) {
  CLI::App app{"train and evaluate the module ablation grid"};
  std::string dataset_dir, out_dir, config_path;
  uint64_t base_seed = 1;
  int seeds = 1;
  int iterations = 1500;
  int workers = 1;
  int eval_episodes = 0;
  bool pretrain = true;
  app.add_option("--config", config_path, "key = value config file with train.* overrides");
  app.add_option("--dataset", dataset_dir, "dataset directory")->required();
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--seed", base_seed, "base seed");
  app.add_option("--seeds", seeds, "seeds per grid cell");
  app.add_option("--iterations", iterations, "training iterations per cell");
  app.add_option("--workers", workers, "parallel rollout workers");
  app.add_option("--eval-episodes", eval_episodes, "val-unseen episode cap (0 = all)");
  app.add_option("--pretrain", pretrain, "run the alignment pretraining stage per cell");
  {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
      return app.exit(e);
    } catch (const CLI::ParseError& e) {
      app.exit(e);
      return util::kExitConfig;
    }
  }
  if (seeds < 1) throw util::ConfigError("--seeds must be at least 1");

  env::Dataset dataset = env::load_dataset(dataset_dir);
  fs::create_directories(out_dir);

  train::TrainConfig base_cfg;
  if (!config_path.empty()) {
    util::KvConfig kv = util::KvConfig::from_file(config_path);
    consume_run_keys(kv);
    base_cfg.apply_kv(kv);
    kv.reject_unknown_keys();
  }
  base_cfg.iterations = iterations;
  base_cfg.workers = workers;
  base_cfg.pretrain = pretrain;
  base_cfg.eval_every = 0;  // grid cells evaluate once, below
  base_cfg.log_every = 0;

  util::KvConfig echo = base_cfg.to_kv();
  echo.set("run.command", "ablate");
  echo.set("run.dataset", dataset_dir);
  echo.set("run.out", out_dir);
  echo.set("ablate.seeds", std::to_string(seeds));
  echo.set("ablate.base_seed", std::to_string(base_seed));
  write_config_echo(out_dir, echo);

  std::ostringstream grid;
  grid << "soat-ablation v1\n";
  grid << "dataset " << dataset_dir << " seeds " << seeds << " iterations " << iterations << "\n";

  std::vector<std::pair<const AblateCell*, CellOutcome>> means;
  for (const AblateCell& cell : kCells) {
    metrics::Aggregate mean;
    int completed = 0;
    std::string first_error;
    for (int k = 0; k < seeds; ++k) {
      const uint64_t run_seed = util::derive_seed(base_seed, static_cast<uint64_t>(cell.row),
                                                  static_cast<uint64_t>(k));
      CellOutcome outcome;
      const std::string cell_dir =
          (fs::path(out_dir) / ("cell" + std::to_string(cell.row) + "_seed" + std::to_string(k)))
              .string();
      try {
        agent::ModelConfig mc;
        mc.vocab_size = dataset.vocab.vocab_size();
        mc.d_scene = dataset.params.feature_dim_scene;
        mc.d_object = dataset.params.feature_dim_object;
        mc.pattern = cell_pattern(cell);
        mc.use_objects = cell.objects;
        mc.use_view_aggregation = cell.aggregation;
        mc.validate();

        train::TrainConfig tc = base_cfg;
        tc.seed = run_seed;
        agent::Model<double> model = agent::Model<double>::make(mc, run_seed);
        train::train_loop(model, dataset, tc, cell_dir);
        auto report = metrics::evaluate_split(&model, agent::Policy::kModel, dataset,
                                              env::kSplitValUnseen,
                                              util::derive_seed(base_seed, 0xe0a1), eval_episodes,
                                              workers);
        metrics::save_report(report, (fs::path(cell_dir) / "report_val-unseen-layout.txt").string());
        outcome.ok = true;
        outcome.unseen = report.overall;
      } catch (const std::exception& e) {
        outcome.ok = false;
        outcome.error = e.what();
      }

      grid << "cell " << cell.row << " label " << cell.label << " objects " << cell.objects
           << " aggregation " << cell.aggregation << " selective " << cell.selective << " seed "
           << run_seed << " status " << (outcome.ok ? "ok" : "failed");
      if (outcome.ok) {
        grid << " sr " << util::format_metric(outcome.unseen.sr) << " spl "
             << util::format_metric(outcome.unseen.spl) << " ndtw "
             << util::format_metric(outcome.unseen.ndtw) << " ne "
             << util::format_metric(outcome.unseen.ne);
        mean.sr += outcome.unseen.sr;
        mean.spl += outcome.unseen.spl;
        mean.ndtw += outcome.unseen.ndtw;
        mean.ne += outcome.unseen.ne;
        ++completed;
      } else {
        grid << " error " << outcome.error;
        if (first_error.empty()) first_error = outcome.error;
      }
      grid << "\n";
    }
    CellOutcome cell_mean;
    if (completed > 0) {
      cell_mean.ok = true;
      cell_mean.unseen.n = completed;
      cell_mean.unseen.sr = mean.sr / completed;
      cell_mean.unseen.spl = mean.spl / completed;
      cell_mean.unseen.ndtw = mean.ndtw / completed;
      cell_mean.unseen.ne = mean.ne / completed;
    } else {
      cell_mean.error = first_error;
    }
    means.push_back({&cell, cell_mean});
  }

  const CellOutcome* baseline = nullptr;
  for (auto& [cell, outcome] : means) {
    if (cell->row == 1 && outcome.ok) baseline = &outcome;
  }
  for (auto& [cell, outcome] : means) {
    grid << "cell-mean " << cell->row << " label " << cell->label << " runs "
         << outcome.unseen.n << " status " << (outcome.ok ? "ok" : "failed");
    if (outcome.ok) {
      grid << " sr " << util::format_metric(outcome.unseen.sr) << " spl "
           << util::format_metric(outcome.unseen.spl) << " ndtw "
           << util::format_metric(outcome.unseen.ndtw) << " ne "
           << util::format_metric(outcome.unseen.ne);
      if (baseline) {
        grid << " dsr " << util::format_metric(outcome.unseen.sr - baseline->unseen.sr) << " dspl "
             << util::format_metric(outcome.unseen.spl - baseline->unseen.spl);
      }
    }
    grid << "\n";
  }
  grid << "end\n";

  const std::string grid_path = (fs::path(out_dir) / "ablation_grid.txt").string();
  util::write_text_file(grid_path, grid.str());
  std::cout << grid.str();
  std::cout << "grid written to " << grid_path << "\n";
  return util::kExitOk;
}

}  // namespace soat::cli
