// Command-line front end for the multi-view test-time adaptation pipeline.
//
// Verbs:
//   gen-data      write a seeded synthetic multi-domain benchmark
//   train-source  train the source classifier on pooled source domains
//   adapt         offline adaptation + multi-view inference on the target
//   adapt-online  streaming inference with a frozen source model
//   ablate        the four-row component matrix {none, tsd, mvlce, tsd_mvlce}
//   evaluate      re-score a predictions CSV against its dataset
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
// failure, 1 anything else.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mvtta/errors.hpp"
#include "mvtta/metrics.hpp"
#include "mvtta/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  bool has_seed = false;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string data_dir;
  std::string checkpoint;
  bool no_pdc = false;
  bool no_tsd = false;
  bool no_mvlce = false;
  bool dump_queue = false;
};

void add_common_options(CLI::App* cmd, CommonArgs* args, bool with_flags) {
  cmd->add_option("--config", args->config_path, "Run configuration JSON");
  cmd->add_option("--seed", args->seed, "Override the run seed")
      ->each([args](const std::string&) { args->has_seed = true; });
  cmd->add_option("--out", args->out_dir, "Output directory")->required();
  cmd->add_option("--data", args->data_dir,
                  "Dataset directory (overrides config data.dir)");
  cmd->add_option("--checkpoint", args->checkpoint,
                  "Model checkpoint (overrides config key)");
  if (with_flags) {
    cmd->add_flag("--no-pdc", args->no_pdc, "Disable distribution calibration");
    cmd->add_flag("--no-tsd", args->no_tsd, "Disable self-distillation");
    cmd->add_flag("--no-mvlce", args->no_mvlce,
                  "Disable neighbour refinement at inference");
    cmd->add_flag("--dump-queue", args->dump_queue,
                  "Write the final memory-queue state to queue.json");
  }
}

mvtta::pipeline::RunConfig resolve_config(const CommonArgs& args) {
  mvtta::pipeline::RunConfig config =
      args.config_path.empty()
          ? mvtta::pipeline::RunConfig{}
          : mvtta::pipeline::load_run_config(args.config_path);
  if (args.has_seed) {
    mvtta::pipeline::set_run_seed(config, args.seed);
  } else if (args.config_path.empty()) {
    mvtta::pipeline::set_run_seed(config, config.seed);
  }
  if (!args.data_dir.empty()) {
    config.data_dir = args.data_dir;
  }
  if (!args.checkpoint.empty()) {
    config.checkpoint = args.checkpoint;
  }
  if (args.no_pdc) {
    config.use_pdc = false;
  }
  if (args.no_tsd) {
    config.use_tsd = false;
  }
  if (args.no_mvlce) {
    config.use_mvlce = false;
  }
  if (args.dump_queue) {
    config.dump_queue = true;
  }
  return config;
}

void print_scored(const mvtta::pipeline::ScoredRun& scored) {
  std::cout << mvtta::metrics::format_table(
      {scored.per_image, scored.per_patient});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Source-free multi-view test-time adaptation pipeline"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  CLI::App* gen = app.add_subcommand(
      "gen-data", "Generate the seeded synthetic benchmark");
  add_common_options(gen, &gen_args, false);

  CommonArgs train_args;
  CLI::App* train = app.add_subcommand(
      "train-source", "Train the source classifier on pooled source domains");
  add_common_options(train, &train_args, false);

  CommonArgs adapt_args;
  CLI::App* adapt = app.add_subcommand(
      "adapt", "Offline adaptation and multi-view inference");
  add_common_options(adapt, &adapt_args, true);

  CommonArgs online_args;
  CLI::App* online = app.add_subcommand(
      "adapt-online", "Streaming inference with a frozen source model");
  add_common_options(online, &online_args, true);

  CommonArgs ablate_args;
  CLI::App* ablate = app.add_subcommand(
      "ablate", "Run the four-row component ablation matrix");
  add_common_options(ablate, &ablate_args, true);

  std::string eval_pred;
  std::string eval_data;
  std::string eval_out;
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Re-score a predictions CSV against its dataset");
  evaluate->add_option("--pred", eval_pred, "predictions.csv path")->required();
  evaluate->add_option("--data", eval_data, "Dataset JSONL path")->required();
  evaluate->add_option("--out", eval_out, "Optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      mvtta::pipeline::run_gen_data(resolve_config(gen_args),
                                    gen_args.out_dir);
      std::cout << "wrote benchmark to " << gen_args.out_dir << "\n";
    } else if (train->parsed()) {
      const mvtta::metrics::MetricsReport report = mvtta::pipeline::run_train_source(
          resolve_config(train_args), train_args.out_dir);
      std::cout << mvtta::metrics::format_table({report});
    } else if (adapt->parsed()) {
      print_scored(mvtta::pipeline::run_adapt_offline(
          resolve_config(adapt_args), adapt_args.out_dir));
    } else if (online->parsed()) {
      print_scored(mvtta::pipeline::run_adapt_online(
          resolve_config(online_args), online_args.out_dir));
    } else if (ablate->parsed()) {
      const auto rows = mvtta::pipeline::run_ablate(
          resolve_config(ablate_args), ablate_args.out_dir);
      std::vector<mvtta::metrics::MetricsReport> reports;
      for (const mvtta::pipeline::AblationRow& row : rows) {
        mvtta::metrics::MetricsReport r = row.scores.per_patient;
        r.granularity = row.name;
        reports.push_back(std::move(r));
      }
      std::cout << "per_patient\n" << mvtta::metrics::format_table(reports);
    } else if (evaluate->parsed()) {
      const auto reports =
          mvtta::pipeline::run_evaluate(eval_pred, eval_data, eval_out);
      std::cout << mvtta::metrics::format_table(reports);
    }
  } catch (const mvtta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const mvtta::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const mvtta::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const mvtta::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
