#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <shared_mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tgh/gaussian.hpp"

namespace tgh {

enum class GaussianId : std::uint32_t {};

constexpr std::uint32_t index_of(GaussianId id) { return static_cast<std::uint32_t>(id); }

inline constexpr int kGlobalLevel = -1;
inline constexpr int kMaxLevels = 32;

/// A segment address: (level, index) or the global segment.
struct SegmentRef {
  int level = kGlobalLevel;
  std::int64_t index = 0;

  static constexpr SegmentRef global() { return {}; }
  constexpr bool is_global() const { return level == kGlobalLevel; }
  friend constexpr bool operator==(const SegmentRef&, const SegmentRef&) = default;
  friend constexpr auto operator<=>(const SegmentRef&, const SegmentRef&) = default;
};

std::string to_string(const SegmentRef& ref);

/// Level/segment arithmetic. Segment n of level l spans
/// [offset(l) + n * s_l, offset(l) + (n + 1) * s_l), half-open.
class HierarchyGeometry {
 public:
  HierarchyGeometry(double duration, double root_length, int num_levels);

  double duration() const { return duration_; }
  double root_length() const { return root_length_; }
  int num_levels() const { return num_levels_; }

  double segment_length(int level) const;
  double level_offset(int level) const;
  std::int64_t segment_count(int level) const;
  double segment_start(int level, std::int64_t n) const;
  double segment_end(int level, std::int64_t n) const { return segment_start(level, n + 1); }

  /// Index of the level-l segment whose half-open span holds t; may fall
  /// outside [0, segment_count) for times outside the covered range.
  std::int64_t index_at(int level, double t) const;

  /// Deepest segment containing [start, end]; global if no bounded one does.
  SegmentRef locate(double start, double end) const;

 private:
  double duration_;
  double root_length_;
  int num_levels_;
  std::vector<std::int64_t> counts_;
};

struct WorkingSet {
  double t = 0.0;
  std::vector<SegmentRef> segment_refs;  // num_levels + 1 entries, global last
  std::vector<GaussianId> gaussian_ids;
};

struct MaterializedSet {
  std::vector<GaussianId> ids;
  std::vector<Gaussian4D> gaussians;
};

struct SegmentOccupancy {
  SegmentRef ref;
  double start = 0.0;
  double end = 0.0;
  std::size_t count = 0;
};

struct Occupancy {
  std::vector<std::size_t> per_level;
  std::size_t global = 0;
  std::vector<SegmentOccupancy> segments;  // non-empty segments, level-major, global last
  std::size_t total() const;
};

struct AuditReport {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

/// Id-only segment index: who lives where. Not synchronized; Hierarchy wraps it.
class TemporalIndex {
 public:
  explicit TemporalIndex(HierarchyGeometry geometry);

  const HierarchyGeometry& geometry() const { return geometry_; }

  /// Places id by its influence range and returns the segment chosen.
  SegmentRef place(GaussianId id, const InfluenceRange& range);
  void move(GaussianId id, SegmentRef to);
  void remove(GaussianId id);
  bool contains(GaussianId id) const;
  SegmentRef ref_of(GaussianId id) const;

  std::span<const GaussianId> members(SegmentRef ref) const;
  /// O(L): one segment per level plus global.
  std::vector<SegmentRef> segments_at(double t) const;
  std::size_t size() const { return live_; }
  Occupancy occupancy() const;

 private:
  struct Slot {
    SegmentRef ref;
    std::uint32_t position = 0;
    bool live = false;
  };

  std::vector<GaussianId>& bucket(SegmentRef ref);
  void attach(GaussianId id, SegmentRef ref);
  void detach(GaussianId id);

  HierarchyGeometry geometry_;
  std::vector<std::vector<std::vector<GaussianId>>> levels_;
  std::vector<GaussianId> global_;
  std::vector<Slot> slots_;
  std::size_t live_ = 0;
};

/// The temporal Gaussian hierarchy: parameter store plus segment index.
///
/// Thread-safety: any number of concurrent readers (const members) or one
/// writer (non-const members); enforced by an internal shared mutex. Values
/// returned by query/materialize are snapshots and stay valid after later writes.
class Hierarchy {
 public:
  static Hierarchy build(double duration, double root_length, int num_levels, double o_th = 0.05);

  Hierarchy(const Hierarchy& other);
  Hierarchy(Hierarchy&& other) noexcept;
  Hierarchy& operator=(const Hierarchy& other);
  Hierarchy& operator=(Hierarchy&& other) noexcept;
  ~Hierarchy() = default;

  const HierarchyGeometry& geometry() const { return index_.geometry(); }
  double o_th() const { return o_th_; }

  GaussianId insert(const Gaussian4D& g);
  void remove(GaussianId id);
  /// Re-derives the placement of id from its current parameters. Returns (old, new).
  std::pair<SegmentRef, SegmentRef> update_level(GaussianId id);
  /// Overwrites parameters, then update_level.
  std::pair<SegmentRef, SegmentRef> set(GaussianId id, const Gaussian4D& g);
  /// Batched set under a single lock.
  void set_many(std::span<const GaussianId> ids, std::span<const Gaussian4D> values);

  Gaussian4D get(GaussianId id) const;
  bool contains(GaussianId id) const;
  SegmentRef placement(GaussianId id) const;
  std::size_t size() const;
  /// Live ids in ascending order.
  std::vector<GaussianId> ids() const;
  std::vector<GaussianId> members(SegmentRef ref) const;

  std::vector<SegmentRef> segments_at(double t) const;
  WorkingSet query(double t) const;
  MaterializedSet materialize(const WorkingSet& ws) const;

  Occupancy occupancy() const;
  /// Partition, containment and minimality checks over every resident.
  AuditReport audit() const;

 private:
  Hierarchy(HierarchyGeometry geometry, double o_th);

  std::pair<SegmentRef, SegmentRef> update_level_locked(GaussianId id);
  void require_live(GaussianId id) const;

  mutable std::shared_mutex mutex_;
  double o_th_;
  TemporalIndex index_;
  std::vector<Gaussian4D> store_;
};

}  // namespace tgh
