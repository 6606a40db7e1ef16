#include <iostream>

#include "CLI11.hpp"
#include "imqa/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"imqa: inter-document multi-hop QA dataset pipeline and evaluation harness"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool mock = false;
  app.add_option("--config", config_path, "pipeline config (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override the config seed");
  app.add_flag("--force", force, "recompute even if the stage is current");
  app.add_flag("--mock-providers", mock, "use the offline generator and embedder");

  std::vector<std::pair<CLI::App*, imqa::Stage>> stage_cmds;
  for (imqa::Stage s : imqa::kAllStages) {
    stage_cmds.emplace_back(app.add_subcommand(imqa::to_string(s), "run the " + imqa::to_string(s) + " stage"), s);
  }
  CLI::App* report_cmd = app.add_subcommand("report", "summarize the run directory");

  CLI11_PARSE(app, argc, argv);

  imqa::PipelineConfig cfg;
  try {
    cfg = imqa::PipelineConfig::load(config_path);
    if (seed) cfg.seed = *seed;
    if (mock) cfg.mock_providers = true;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "config: " << e.what() << "\n";
    return 2;
  }

  if (report_cmd->parsed()) {
    try {
      const std::string text = imqa::render_report(cfg.output_dir);
      imqa::write_file_atomic(cfg.output_dir / "report.txt", text);
      std::cout << text;
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "report: " << e.what() << "\n";
      return 1;
    }
  }

  for (const auto& [cmd, stage] : stage_cmds) {
    if (!cmd->parsed()) continue;
    try {
      imqa::Pipeline pipeline(cfg, imqa::make_providers(cfg));
      const auto result = pipeline.run(stage, force);
      std::cout << imqa::to_string(stage) << ": " << (result.skipped ? "up to date" : "done") << " "
                << result.manifest.counts.dump() << "\n";
      return 0;
    } catch (const imqa::StageError& e) {
      std::cerr << e.what() << "\n";
    } catch (const std::exception& e) {
      std::cerr << imqa::to_string(stage) << ": " << e.what() << "\n";
    }
    return 1;
  }
  return 1;
}
