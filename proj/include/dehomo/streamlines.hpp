#pragma once

#include "dehomo/field_topology.hpp"

#include <filesystem>

namespace dehomo {

enum class StopReason { Boundary, Proximity, Degenerate, Singularity, StepCap, Loop };

const char* stop_reason_name(StopReason r);

/// Crossing with a streamline of the other family.
struct Crossing {
  Vec2 position = Vec2::Zero();
  int partner = -1;
  /// Fractional point index along this line (segment k, parameter t gives k + t).
  double index = 0.0;
  /// Shared id of the crossing, the same on both lines.
  int node = -1;
};

struct Streamline {
  int id = -1;
  Family family = Family::U;
  std::vector<Vec2> points;
  /// Arc length at each point.
  std::vector<double> arc;
  std::vector<Crossing> intersections;
  /// Why integration ended at the first and at the last point.
  StopReason start_stop = StopReason::Boundary;
  StopReason end_stop = StopReason::Boundary;
  /// Same-family line that stopped the trace at either end, or -1.
  int start_blocker = -1;
  int end_blocker = -1;
  /// Degenerate point the line starts from (separatrices), or -1.
  int origin_point = -1;
  bool closed = false;
  bool separatrix = false;

  [[nodiscard]] double length() const { return arc.empty() ? 0.0 : arc.back(); }
  [[nodiscard]] Vec2 point_at(double index) const;
};

struct TraceOptions {
  /// Integration step, in element widths.
  double step = 0.25;
  double d_sep = 4.0;
  /// Defaults to d_sep / 2 when not positive.
  double d_test = 0.0;
  double r_deg = 1.0;
  /// Defaults to 20 (width + height) / step when not positive.
  int max_steps = 0;

  [[nodiscard]] double test_distance() const { return d_test > 0.0 ? d_test : 0.5 * d_sep; }
};

/// Uniform bucket grid of streamline segments per family; bucket size d_sep.
class SpacingIndex {
 public:
  SpacingIndex() = default;
  SpacingIndex(Vec2 lo, Vec2 hi, double bucket);

  void add(const Streamline& line);
  /// Distance from segment ab to the nearest registered segment of `family`, capped at
  /// `limit` (returns `limit` when nothing is closer). `skip_line` is ignored.
  [[nodiscard]] double distance(Family family, const Vec2& a, const Vec2& b, double limit,
                                int skip_line = -1, int* nearest_line = nullptr) const;
  [[nodiscard]] double distance(Family family, const Vec2& p, double limit,
                                int skip_line = -1, int* nearest_line = nullptr) const {
    return distance(family, p, p, limit, skip_line, nearest_line);
  }
  [[nodiscard]] std::size_t segments() const { return segs_.size(); }

 private:
  struct Segment {
    Vec2 a, b;
    int line;
    Family family;
  };
  Vec2 lo_ = Vec2::Zero();
  double bucket_ = 1.0;
  int bx_ = 0, by_ = 0;
  std::vector<Segment> segs_;
  std::vector<std::vector<int>> buckets_[2];

  [[nodiscard]] int bucket_x(double x) const;
  [[nodiscard]] int bucket_y(double y) const;
};

/// Bidirectional RK4 streamline from `seed`. `points` supplies the degenerate points used for
/// the avoidance radius; `index` the existing lines for the proximity stop (may be null).
/// Throws SeedRejected when the seed is outside, degenerate, too close to a same-family line
/// or within r_deg of a degenerate point.
Streamline trace(const DirectionField& field, const Vec2& seed, Family family,
                 const TraceOptions& options, std::span<const DegeneratePoint> points = {},
                 const SpacingIndex* index = nullptr);

/// One-directional trace leaving degenerate point `point_id` along the ray at `angle`.
Streamline trace_separatrix(const DirectionField& field, std::span<const DegeneratePoint> points,
                            int point_id, double angle, Family family, const TraceOptions& options,
                            const SpacingIndex* index = nullptr);

struct StreamlineSet {
  std::vector<Streamline> lines;
  /// Crossing positions by shared node id.
  std::vector<Vec2> crossings;

  [[nodiscard]] int count(Family f) const;
};

/// Evenly spaced u and v lines: separatrices first, then seeds at +-d_sep normal offsets
/// from queued lines in FIFO order, then a gap-filling pass over a probe grid. Throws
/// EmptyField when the field is zero everywhere.
StreamlineSet evenly_spaced_set(const DirectionField& field, const TraceOptions& options,
                                std::span<const DegeneratePoint> points = {});

/// Crossings between u and v lines through a per-cell registry of segment ids. Fills
/// `intersections` of every line and returns the crossing positions by node id.
std::vector<Vec2> compute_intersections(std::vector<Streamline>& lines, double cell_size = 1.0);

/// Fraction of `probes` x `probes` grid points inside the domain lying within `radius` of a
/// line of `family`.
double coverage(const DirectionField& field, std::span<const Streamline> lines, Family family,
                double radius, int probes = 200);

/// Lines as text rows: family, id, point count, then x y pairs.
void write_polylines(const std::filesystem::path& file, std::span<const Streamline> lines);
std::vector<Streamline> read_polylines(const std::filesystem::path& file);

}  // namespace dehomo
