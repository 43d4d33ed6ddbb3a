#include "dehomo/pipeline.hpp"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <regex>

namespace {

int stage_exit_code(dehomo::Stage s) {
  switch (s) {
    case dehomo::Stage::Optimize: return 3;
    case dehomo::Stage::Trace: return 4;
    case dehomo::Stage::Mesh: return 5;
    case dehomo::Stage::Dehomo: return 6;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dehomogenization pipeline: orthotropic topology optimization to a binary lattice"};
  app.require_subcommand(1);
  auto* run = app.add_subcommand("run", "Run the pipeline from a config file");
  std::string config_file, out_dir, stage, res;
  double dsep = 0.0, volfrac = 0.0;
  run->add_option("--config", config_file, "Config file")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--stage", stage, "Last stage: optimize, trace, mesh or dehomo");
  run->add_option("--dsep", dsep, "Streamline spacing in element widths");
  run->add_option("--volfrac", volfrac, "Target volume fraction");
  run->add_option("--res", res, "Coarse resolution as <nx>x<ny>");
  CLI11_PARSE(app, argc, argv);

  dehomo::PipelineConfig config;
  try {
    config = dehomo::load_config(config_file);
    if (!out_dir.empty()) config.output = out_dir;
    if (!stage.empty()) config.stage = dehomo::parse_stage(stage);
    if (run->count("--dsep")) config.d_sep = dsep;
    if (run->count("--volfrac")) config.volume_fraction = volfrac;
    if (!res.empty()) {
      std::smatch m;
      if (!std::regex_match(res, m, std::regex(R"((\d+)x(\d+))")))
        throw dehomo::InvalidArgument("--res expects <nx>x<ny>");
      config.nx = std::stoi(m[1]);
      config.ny = std::stoi(m[2]);
    }
    config.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }

  try {
    const auto report = dehomo::run_pipeline(config);
    std::printf("stage %s: c0 %.6g  c* %.6g", report.stage.c_str(), report.c0, report.c_star);
    if (report.c)
      std::printf("  c %.6g  v %.4f  deviation %.2f%%", *report.c, *report.v_achieved,
                  100.0 * *report.deviation);
    std::printf("\nartifacts in %s\n", config.output.string().c_str());
    return 0;
  } catch (const dehomo::StageError& e) {
    std::cerr << "error in stage " << e.what() << '\n';
    return stage_exit_code(e.stage());
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
}
