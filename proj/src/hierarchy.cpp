#include "tgh/hierarchy.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "tgh/error.hpp"

namespace tgh {

std::string to_string(const SegmentRef& ref) {
  if (ref.is_global()) return "global";
  return "L" + std::to_string(ref.level) + "#" + std::to_string(ref.index);
}

std::size_t Occupancy::total() const {
  std::size_t n = global;
  for (auto c : per_level) n += c;
  return n;
}

// ---------------------------------------------------------------------------
// HierarchyGeometry

HierarchyGeometry::HierarchyGeometry(double duration, double root_length, int num_levels)
    : duration_(duration), root_length_(root_length), num_levels_(num_levels) {
  if (!(duration > 0.0) || !std::isfinite(duration)) fail(ErrorKind::InvalidParameter, "duration must be positive");
  if (!(root_length > 0.0) || !std::isfinite(root_length))
    fail(ErrorKind::InvalidParameter, "root_length must be positive");
  if (num_levels < 1 || num_levels > kMaxLevels) fail(ErrorKind::InvalidParameter, "num_levels must be in [1, 32]");
  counts_.resize(num_levels);
  for (int l = 0; l < num_levels; ++l) {
    // Dense segment array covering [offset, duration], t = duration included.
    const double span = (duration - level_offset(l)) / segment_length(l);
    std::int64_t n = static_cast<std::int64_t>(std::floor(span)) + 1;
    while (n > 1 && segment_start(l, n - 1) > duration) --n;
    while (segment_start(l, n) <= duration) ++n;
    counts_[l] = n;
  }
}

double HierarchyGeometry::segment_length(int level) const { return std::ldexp(root_length_, -level); }

double HierarchyGeometry::level_offset(int level) const { return -std::ldexp(root_length_, -(level + 2)); }

std::int64_t HierarchyGeometry::segment_count(int level) const { return counts_.at(level); }

double HierarchyGeometry::segment_start(int level, std::int64_t n) const {
  return level_offset(level) + static_cast<double>(n) * segment_length(level);
}

std::int64_t HierarchyGeometry::index_at(int level, double t) const {
  const double s = segment_length(level);
  auto n = static_cast<std::int64_t>(std::floor((t - level_offset(level)) / s));
  // Make floor agree with the boundary values used everywhere else.
  if (segment_start(level, n) > t) {
    --n;
  } else if (segment_start(level, n + 1) <= t) {
    ++n;
  }
  return n;
}

SegmentRef HierarchyGeometry::locate(double start, double end) const {
  if (!std::isfinite(start) || !std::isfinite(end)) return SegmentRef::global();
  for (int l = num_levels_ - 1; l >= 0; --l) {
    const std::int64_t n = index_at(l, start);
    if (n < 0 || n >= counts_[l]) continue;
    if (end <= segment_end(l, n)) return {l, n};
  }
  return SegmentRef::global();
}

// ---------------------------------------------------------------------------
// TemporalIndex

TemporalIndex::TemporalIndex(HierarchyGeometry geometry) : geometry_(std::move(geometry)) {
  levels_.resize(geometry_.num_levels());
  for (int l = 0; l < geometry_.num_levels(); ++l) levels_[l].resize(geometry_.segment_count(l));
}

std::vector<GaussianId>& TemporalIndex::bucket(SegmentRef ref) {
  if (ref.is_global()) return global_;
  return levels_[ref.level][ref.index];
}

std::span<const GaussianId> TemporalIndex::members(SegmentRef ref) const {
  if (ref.is_global()) return global_;
  if (ref.level < 0 || ref.level >= geometry_.num_levels() || ref.index < 0 ||
      ref.index >= geometry_.segment_count(ref.level))
    fail(ErrorKind::OutOfRange, "no such segment " + to_string(ref));
  return levels_[ref.level][ref.index];
}

void TemporalIndex::attach(GaussianId id, SegmentRef ref) {
  auto& b = bucket(ref);
  Slot& slot = slots_[index_of(id)];
  slot.ref = ref;
  slot.position = static_cast<std::uint32_t>(b.size());
  b.push_back(id);
}

void TemporalIndex::detach(GaussianId id) {
  Slot& slot = slots_[index_of(id)];
  auto& b = bucket(slot.ref);
  const GaussianId last = b.back();
  b[slot.position] = last;
  slots_[index_of(last)].position = slot.position;
  b.pop_back();
}

SegmentRef TemporalIndex::place(GaussianId id, const InfluenceRange& range) {
  if (contains(id)) fail(ErrorKind::InvalidParameter, "id already placed");
  const std::uint32_t i = index_of(id);
  if (slots_.size() <= i) slots_.resize(static_cast<std::size_t>(i) + 1);
  const SegmentRef ref = geometry_.locate(range.start, range.end);
  attach(id, ref);
  slots_[i].live = true;
  ++live_;
  return ref;
}

void TemporalIndex::move(GaussianId id, SegmentRef to) {
  if (!contains(id)) fail(ErrorKind::NotFound, "unknown Gaussian id " + std::to_string(index_of(id)));
  if (slots_[index_of(id)].ref == to) return;
  detach(id);
  attach(id, to);
}

void TemporalIndex::remove(GaussianId id) {
  if (!contains(id)) fail(ErrorKind::NotFound, "unknown Gaussian id " + std::to_string(index_of(id)));
  detach(id);
  slots_[index_of(id)].live = false;
  --live_;
}

bool TemporalIndex::contains(GaussianId id) const {
  const std::uint32_t i = index_of(id);
  return i < slots_.size() && slots_[i].live;
}

SegmentRef TemporalIndex::ref_of(GaussianId id) const {
  if (!contains(id)) fail(ErrorKind::NotFound, "unknown Gaussian id " + std::to_string(index_of(id)));
  return slots_[index_of(id)].ref;
}

std::vector<SegmentRef> TemporalIndex::segments_at(double t) const {
  std::vector<SegmentRef> refs;
  refs.reserve(geometry_.num_levels() + 1);
  for (int l = 0; l < geometry_.num_levels(); ++l) {
    const std::int64_t n = std::clamp<std::int64_t>(geometry_.index_at(l, t), 0, geometry_.segment_count(l) - 1);
    refs.push_back({l, n});
  }
  refs.push_back(SegmentRef::global());
  return refs;
}

Occupancy TemporalIndex::occupancy() const {
  Occupancy occ;
  occ.per_level.assign(geometry_.num_levels(), 0);
  for (int l = 0; l < geometry_.num_levels(); ++l) {
    for (std::int64_t n = 0; n < static_cast<std::int64_t>(levels_[l].size()); ++n) {
      const std::size_t c = levels_[l][n].size();
      if (c == 0) continue;
      occ.per_level[l] += c;
      occ.segments.push_back({{l, n}, geometry_.segment_start(l, n), geometry_.segment_end(l, n), c});
    }
  }
  occ.global = global_.size();
  if (occ.global > 0) {
    occ.segments.push_back({SegmentRef::global(), -std::numeric_limits<double>::infinity(),
                            std::numeric_limits<double>::infinity(), occ.global});
  }
  return occ;
}

// ---------------------------------------------------------------------------
// Hierarchy

Hierarchy::Hierarchy(HierarchyGeometry geometry, double o_th) : o_th_(o_th), index_(std::move(geometry)) {
  if (!(o_th > 0.0 && o_th < 1.0)) fail(ErrorKind::InvalidParameter, "o_th must lie in (0, 1)");
}

Hierarchy Hierarchy::build(double duration, double root_length, int num_levels, double o_th) {
  return Hierarchy(HierarchyGeometry(duration, root_length, num_levels), o_th);
}

Hierarchy::Hierarchy(const Hierarchy& other) : o_th_(0.0), index_(other.geometry()) {
  std::shared_lock lock(other.mutex_);
  o_th_ = other.o_th_;
  index_ = other.index_;
  store_ = other.store_;
}

Hierarchy::Hierarchy(Hierarchy&& other) noexcept
    : o_th_(other.o_th_), index_(std::move(other.index_)), store_(std::move(other.store_)) {}

Hierarchy& Hierarchy::operator=(const Hierarchy& other) {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  o_th_ = other.o_th_;
  index_ = other.index_;
  store_ = other.store_;
  return *this;
}

Hierarchy& Hierarchy::operator=(Hierarchy&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(mutex_, other.mutex_);
  o_th_ = other.o_th_;
  index_ = std::move(other.index_);
  store_ = std::move(other.store_);
  return *this;
}

void Hierarchy::require_live(GaussianId id) const {
  if (!index_.contains(id)) fail(ErrorKind::NotFound, "unknown Gaussian id " + std::to_string(index_of(id)));
}

GaussianId Hierarchy::insert(const Gaussian4D& g) {
  const InfluenceRange range = influence_range(g, o_th_);
  std::unique_lock lock(mutex_);
  const auto id = static_cast<GaussianId>(store_.size());
  store_.push_back(g);
  index_.place(id, range);
  return id;
}

void Hierarchy::remove(GaussianId id) {
  std::unique_lock lock(mutex_);
  index_.remove(id);
}

std::pair<SegmentRef, SegmentRef> Hierarchy::update_level_locked(GaussianId id) {
  require_live(id);
  const SegmentRef old_ref = index_.ref_of(id);
  const Gaussian4D& g = store_[index_of(id)];
  const InfluenceRange range = influence_range(g, o_th_);
  const HierarchyGeometry& geo = index_.geometry();

  // Per level: start index and end index; the Gaussian fits the level when they agree.
  SegmentRef new_ref = SegmentRef::global();
  for (int l = geo.num_levels() - 1; l >= 0; --l) {
    const std::int64_t n_start = geo.index_at(l, range.start);
    if (n_start < 0 || n_start >= geo.segment_count(l)) continue;
    const std::int64_t n_end = range.end <= geo.segment_end(l, n_start) ? n_start : geo.index_at(l, range.end);
    if (n_start == n_end) {
      new_ref = {l, n_start};
      break;
    }
  }
  index_.move(id, new_ref);
  return {old_ref, new_ref};
}

std::pair<SegmentRef, SegmentRef> Hierarchy::update_level(GaussianId id) {
  std::unique_lock lock(mutex_);
  return update_level_locked(id);
}

std::pair<SegmentRef, SegmentRef> Hierarchy::set(GaussianId id, const Gaussian4D& g) {
  std::unique_lock lock(mutex_);
  require_live(id);
  store_[index_of(id)] = g;
  return update_level_locked(id);
}

void Hierarchy::set_many(std::span<const GaussianId> ids, std::span<const Gaussian4D> values) {
  if (ids.size() != values.size()) fail(ErrorKind::InvalidParameter, "set_many: size mismatch");
  std::unique_lock lock(mutex_);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require_live(ids[i]);
    store_[index_of(ids[i])] = values[i];
    update_level_locked(ids[i]);
  }
}

Gaussian4D Hierarchy::get(GaussianId id) const {
  std::shared_lock lock(mutex_);
  require_live(id);
  return store_[index_of(id)];
}

bool Hierarchy::contains(GaussianId id) const {
  std::shared_lock lock(mutex_);
  return index_.contains(id);
}

SegmentRef Hierarchy::placement(GaussianId id) const {
  std::shared_lock lock(mutex_);
  return index_.ref_of(id);
}

std::size_t Hierarchy::size() const {
  std::shared_lock lock(mutex_);
  return index_.size();
}

std::vector<GaussianId> Hierarchy::ids() const {
  std::shared_lock lock(mutex_);
  std::vector<GaussianId> out;
  out.reserve(index_.size());
  for (std::uint32_t i = 0; i < store_.size(); ++i)
    if (index_.contains(static_cast<GaussianId>(i))) out.push_back(static_cast<GaussianId>(i));
  return out;
}

std::vector<GaussianId> Hierarchy::members(SegmentRef ref) const {
  std::shared_lock lock(mutex_);
  const auto m = index_.members(ref);
  return {m.begin(), m.end()};
}

std::vector<SegmentRef> Hierarchy::segments_at(double t) const {
  const double duration = geometry().duration();
  if (!(t >= 0.0 && t <= duration))
    fail(ErrorKind::OutOfRange, "time " + std::to_string(t) + " outside [0, " + std::to_string(duration) + "]");
  std::shared_lock lock(mutex_);
  return index_.segments_at(t);
}

WorkingSet Hierarchy::query(double t) const {
  WorkingSet ws;
  ws.t = t;
  ws.segment_refs = segments_at(t);
  std::shared_lock lock(mutex_);
  std::size_t total = 0;
  for (const auto& ref : ws.segment_refs) total += index_.members(ref).size();
  ws.gaussian_ids.reserve(total);
  for (const auto& ref : ws.segment_refs) {
    const auto m = index_.members(ref);
    ws.gaussian_ids.insert(ws.gaussian_ids.end(), m.begin(), m.end());
  }
  return ws;
}

MaterializedSet Hierarchy::materialize(const WorkingSet& ws) const {
  std::shared_lock lock(mutex_);
  MaterializedSet out;
  out.ids.reserve(ws.gaussian_ids.size());
  out.gaussians.reserve(ws.gaussian_ids.size());
  for (GaussianId id : ws.gaussian_ids) {
    if (!index_.contains(id)) continue;
    out.ids.push_back(id);
    out.gaussians.push_back(store_[index_of(id)]);
  }
  return out;
}

Occupancy Hierarchy::occupancy() const {
  std::shared_lock lock(mutex_);
  return index_.occupancy();
}

AuditReport Hierarchy::audit() const {
  std::shared_lock lock(mutex_);
  AuditReport report;
  const HierarchyGeometry& geo = index_.geometry();
  auto problem = [&](GaussianId id, const std::string& what) {
    report.problems.push_back("id " + std::to_string(index_of(id)) + ": " + what);
  };

  // Partition: each live id appears in exactly the segment its slot records.
  std::vector<std::uint8_t> seen(store_.size(), 0);
  std::size_t listed = 0;
  auto visit = [&](SegmentRef ref) {
    for (GaussianId id : index_.members(ref)) {
      ++listed;
      if (index_of(id) >= seen.size() || !index_.contains(id)) {
        problem(id, "listed in " + to_string(ref) + " but not stored");
        continue;
      }
      if (seen[index_of(id)]++) problem(id, "listed in more than one segment");
      if (index_.ref_of(id) != ref) problem(id, "slot disagrees with segment " + to_string(ref));
    }
  };
  for (int l = 0; l < geo.num_levels(); ++l)
    for (std::int64_t n = 0; n < geo.segment_count(l); ++n) visit({l, n});
  visit(SegmentRef::global());
  if (listed != index_.size()) report.problems.push_back("segment membership count differs from store size");

  for (std::uint32_t i = 0; i < store_.size(); ++i) {
    const auto id = static_cast<GaussianId>(i);
    if (!index_.contains(id)) continue;
    if (!seen[i]) problem(id, "stored but not listed in any segment");
    const InfluenceRange r = influence_range(store_[i], o_th_);
    const SegmentRef ref = index_.ref_of(id);
    if (!ref.is_global()) {
      if (!(geo.segment_start(ref.level, ref.index) <= r.start && r.end <= geo.segment_end(ref.level, ref.index)))
        problem(id, "influence range not contained in " + to_string(ref));
    }
    const int first_deeper = ref.is_global() ? 0 : ref.level + 1;
    for (int l = first_deeper; l < geo.num_levels(); ++l) {
      const std::int64_t n = geo.index_at(l, r.start);
      if (n >= 0 && n < geo.segment_count(l) && r.end <= geo.segment_end(l, n)) {
        problem(id, "a deeper segment " + to_string({l, n}) + " contains the range");
        break;
      }
    }
  }
  return report;
}

}  // namespace tgh
