#include <CLI11.hpp>
#include <cstdio>

#include "fgm/cli.hpp"

int main(int argc, char** argv) {
  using namespace fgm;
  CLI::App app{"f-divergence generative model experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoint;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "run configuration (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", out, "overrides the config out_dir");
  };
  CLI::App* gen = app.add_subcommand("gen-data", "sample a synthetic data set to CSV");
  CLI::App* train = app.add_subcommand("train", "run the minimax training loop");
  CLI::App* check = app.add_subcommand("check", "run the bound, identity and optimum checks");
  CLI::App* eval = app.add_subcommand("eval", "recompute diagnostics from a checkpoint");
  for (CLI::App* sub : {gen, train, check, eval}) add_common(sub);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default <out>/checkpoint.fgm)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kUsage;
  }

  return cli::run_command([&] {
    config::RunConfig cfg = config::load_run_config(config_path);
    std::optional<std::filesystem::path> out_dir;
    if (out) out_dir = *out;
    config::apply_overrides(cfg, seed, out_dir);
    if (gen->parsed()) return cli::cmd_gen_data(cfg);
    if (train->parsed()) return cli::cmd_train(cfg);
    if (check->parsed()) return cli::cmd_check(cfg);
    std::optional<std::filesystem::path> ckpt;
    if (checkpoint) ckpt = *checkpoint;
    return cli::cmd_eval(cfg, ckpt);
  });
}
