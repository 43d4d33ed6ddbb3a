#pragma once

#include "dehomo/dehomogenizer.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>

namespace dehomo {

enum class Stage { Optimize, Trace, Mesh, Dehomo };

const char* stage_name(Stage s);
/// Throws InvalidArgument for unknown names.
Stage parse_stage(std::string_view name);

/// Error raised inside a pipeline stage, carrying the stage it came from.
class StageError : public Error {
 public:
  StageError(Stage stage, const std::string& what)
      : Error(std::string(stage_name(stage)) + ": " + what), stage_(stage) {}
  [[nodiscard]] Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

struct PipelineConfig {
  /// Built-in name or path of a problem file.
  std::string problem = "cantilever";
  /// Zero picks the problem's default resolution.
  int nx = 0;
  int ny = 0;
  double volume_fraction = 0.5;
  double youngs_modulus = 1.0;
  double poisson_ratio = 0.3;

  int iterations = 200;
  double filter_radius = 2.5;
  double move_limit = 0.01;
  /// Also run the square-hole density baseline at the same volume.
  bool baseline = false;

  int table_samples = 21;
  int table_resolution = 60;
  std::filesystem::path table_cache = "dehomo_cache";

  /// Streamline spacing and step, in element widths.
  double d_sep = 3.5;
  double step = 0.25;

  /// Edge widths in raster pixels.
  double t0 = 0.2;
  double delta = 0.1;
  int q = 8;
  double void_threshold = 0.05;
  double solid_threshold = 0.95;
  double variance_threshold = 0.2;
  /// Zero means 8 nx by 8 ny.
  int raster_nx = 0;
  int raster_ny = 0;

  std::filesystem::path output = "out";
  Stage stage = Stage::Dehomo;
  /// Reuse an optimization snapshot in the output directory when its settings match.
  bool resume = true;
  /// Write the vector-graphics renders.
  bool renders = true;

  /// Throws InvalidArgument on out-of-range values.
  void validate() const;
};

/// "key = value" lines grouped in [problem], [optimizer], [homogenization], [streamlines],
/// [dehomogenization] and [output] sections. Unknown keys are rejected.
PipelineConfig parse_config(std::istream& in);
PipelineConfig load_config(const std::filesystem::path& file);

/// Default resolution of a built-in problem. Throws UnknownProblem.
std::pair<int, int> builtin_resolution(const std::string& name);

/// Benchmark problems with a unit load. Zero nx or ny picks the default resolution; explicit
/// sizes must keep the problem's aspect ratio.
ProblemDefinition builtin_problem(const std::string& name, int nx = 0, int ny = 0,
                                  double youngs_modulus = 1.0, double poisson_ratio = 0.3,
                                  double volume_fraction = 0.5);

/// Text problem file: "grid nx ny", "material E nu", "support i j fix_x fix_y",
/// "load i j fx fy" and "void i j" rows, '#' comments.
void write_problem(const std::filesystem::path& file, const ProblemDefinition& problem);
ProblemDefinition read_problem(const std::filesystem::path& file);

struct MetricsReport {
  std::string problem;
  std::string stage;
  int nx = 0;
  int ny = 0;
  double c0 = 0.0;
  double c_star = 0.0;
  double v_target = 0.0;
  /// Mean density of the optimized design.
  double v_star = 0.0;
  /// Set once the dehomogenization stage ran.
  std::optional<double> c;
  std::optional<double> v_achieved;
  std::optional<double> deviation;
  std::optional<double> c_baseline;
  /// Named counts in a fixed order.
  std::map<std::string, long long> counts;
  std::map<std::string, double> values;
  std::map<std::string, double> seconds;
  std::vector<std::string> warnings;
};

/// Runs the stages up to config.stage, writing artifacts into config.output. metrics.json
/// holds everything but the wall times, which go to timings.json.
MetricsReport run_pipeline(const PipelineConfig& config);

void write_metrics(const std::filesystem::path& file, const MetricsReport& report);

}  // namespace dehomo
