#include "tgh/codec.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <queue>

#include <boost/crc.hpp>

#include "tgh/appearance.hpp"
#include "tgh/error.hpp"

namespace tgh {

std::uint64_t crc64(std::span<const std::uint8_t> bytes) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

namespace huffman {

namespace {

// Depths of a Huffman tree over the used symbols. Ties break on node id so
// the result is deterministic.
Lengths tree_depths(const std::array<std::uint64_t, 256>& freq) {
  struct Node {
    std::uint64_t weight;
    int id;
  };
  auto heavier = [](const Node& a, const Node& b) { return a.weight != b.weight ? a.weight > b.weight : a.id > b.id; };
  std::priority_queue<Node, std::vector<Node>, decltype(heavier)> heap(heavier);
  std::vector<int> parent;
  for (int s = 0; s < 256; ++s) {
    parent.push_back(-1);
    if (freq[s] > 0) heap.push({freq[s], s});
  }
  while (heap.size() > 1) {
    const Node a = heap.top();
    heap.pop();
    const Node b = heap.top();
    heap.pop();
    const int id = static_cast<int>(parent.size());
    parent.push_back(-1);
    parent[a.id] = id;
    parent[b.id] = id;
    heap.push({a.weight + b.weight, id});
  }
  Lengths lengths{};
  for (int s = 0; s < 256; ++s) {
    if (freq[s] == 0) continue;
    int depth = 0;
    for (int n = s; parent[n] >= 0; n = parent[n]) ++depth;
    lengths[s] = static_cast<std::uint8_t>(std::max(depth, 1));
  }
  return lengths;
}

}  // namespace

Lengths code_lengths(const std::array<std::uint64_t, 256>& freq, int max_length) {
  if (max_length < 8 || max_length > 32) fail(ErrorKind::InvalidParameter, "huffman: max_length must be in [8, 32]");
  std::array<std::uint64_t, 256> f = freq;
  while (true) {
    const Lengths lengths = tree_depths(f);
    if (*std::max_element(lengths.begin(), lengths.end()) <= max_length) return lengths;
    for (auto& w : f)
      if (w > 0) w = std::max<std::uint64_t>(1, w / 2);
  }
}

std::array<std::uint32_t, 256> canonical_codes(const Lengths& lengths) {
  std::array<int, 256> order{};
  for (int s = 0; s < 256; ++s) order[s] = s;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return lengths[a] < lengths[b]; });
  std::array<std::uint32_t, 256> codes{};
  std::uint64_t code = 0;
  int prev = 0;
  for (const int s : order) {
    if (lengths[s] == 0) continue;
    if (prev != 0) code = (code + 1) << (lengths[s] - prev);
    prev = lengths[s];
    codes[s] = static_cast<std::uint32_t>(code);
  }
  return codes;
}

double kraft_sum(const Lengths& lengths) {
  double sum = 0.0;
  for (const auto len : lengths)
    if (len > 0) sum += std::ldexp(1.0, -len);
  return sum;
}

namespace {

int used_symbols(const Lengths& lengths) {
  return static_cast<int>(std::count_if(lengths.begin(), lengths.end(), [](std::uint8_t l) { return l > 0; }));
}

}  // namespace

Bitstream encode(std::span<const std::uint8_t> symbols, const Lengths& lengths) {
  Bitstream out;
  if (used_symbols(lengths) <= 1) {
    for (const auto s : symbols)
      if (lengths[s] == 0) fail(ErrorKind::InvalidParameter, "huffman: symbol without a code");
    return out;
  }
  const auto codes = canonical_codes(lengths);
  std::uint64_t acc = 0;
  int pending = 0;
  for (const auto s : symbols) {
    const int len = lengths[s];
    if (len == 0) fail(ErrorKind::InvalidParameter, "huffman: symbol without a code");
    acc = (acc << len) | codes[s];
    pending += len;
    out.bits += static_cast<std::uint64_t>(len);
    while (pending >= 8) {
      pending -= 8;
      out.bytes.push_back(static_cast<std::uint8_t>(acc >> pending));
    }
    acc &= (std::uint64_t{1} << pending) - 1;
  }
  if (pending > 0) out.bytes.push_back(static_cast<std::uint8_t>(acc << (8 - pending)));
  return out;
}

std::vector<std::uint8_t> decode(const Bitstream& stream, const Lengths& lengths, std::size_t count) {
  std::vector<std::uint8_t> out;
  out.reserve(count);
  const int used = used_symbols(lengths);
  if (count == 0) {
    if (stream.bits != 0) fail(ErrorKind::Integrity, "huffman: trailing bits");
    return out;
  }
  if (used == 0) fail(ErrorKind::Integrity, "huffman: empty code table");
  if (used == 1) {
    if (stream.bits != 0) fail(ErrorKind::Integrity, "huffman: trailing bits");
    const auto s = static_cast<std::uint8_t>(std::find_if(lengths.begin(), lengths.end(), [](auto l) { return l > 0; }) -
                                             lengths.begin());
    out.assign(count, s);
    return out;
  }
  if (kraft_sum(lengths) > 1.0) fail(ErrorKind::Integrity, "huffman: code lengths violate the Kraft inequality");
  if (stream.bytes.size() * 8 < stream.bits) fail(ErrorKind::Integrity, "huffman: stream shorter than its bit count");

  // Canonical decoding: per length, the first code and the index of its first symbol.
  constexpr int kLimit = 33;
  std::array<std::uint32_t, kLimit> count_at{};
  for (const auto l : lengths) ++count_at[l];
  count_at[0] = 0;
  std::vector<std::uint8_t> sorted;
  for (int len = 1; len < kLimit; ++len)
    for (int s = 0; s < 256; ++s)
      if (lengths[s] == len) sorted.push_back(static_cast<std::uint8_t>(s));

  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t code = 0, first = 0;
    std::uint32_t index = 0;
    for (int len = 1;; ++len) {
      if (len >= kLimit || pos >= stream.bits) fail(ErrorKind::Integrity, "huffman: truncated or invalid stream");
      code = (code << 1) | ((stream.bytes[pos >> 3] >> (7 - (pos & 7))) & 1u);
      ++pos;
      if (code - first < count_at[len]) {
        out.push_back(sorted[index + (code - first)]);
        break;
      }
      index += count_at[len];
      first = (first + count_at[len]) << 1;
    }
  }
  if (pos != stream.bits) fail(ErrorKind::Integrity, "huffman: trailing bits");
  return out;
}

}  // namespace huffman

namespace {

std::uint16_t to_half(double x) { return std::bit_cast<std::uint16_t>(Eigen::half(static_cast<float>(x))); }
double from_half(std::uint16_t bits) { return static_cast<double>(static_cast<float>(std::bit_cast<Eigen::half>(bits))); }

std::uint8_t to_unorm8(double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); }

std::array<std::uint16_t, 4> half_rotor(const Eigen::Vector4d& r) {
  std::array<std::uint16_t, 4> q{};
  for (int i = 0; i < 4; ++i) q[i] = to_half(r[i]);
  return q;
}

Eigen::Vector4d unit_rotor(const std::array<std::uint16_t, 4>& q) {
  Eigen::Vector4d r(from_half(q[0]), from_half(q[1]), from_half(q[2]), from_half(q[3]));
  const double n = r.norm();
  if (!(n > 0.0) || !std::isfinite(n)) return Eigen::Vector4d(1.0, 0.0, 0.0, 0.0);
  return r / n;
}

// Adjacent representable half toward +inf (dir > 0) or -inf.
std::uint16_t half_step(std::uint16_t bits, int dir) {
  const bool negative = (bits & 0x8000) != 0;
  if ((bits & 0x7FFF) == 0) return dir > 0 ? 0x0001 : 0x8001;
  return static_cast<std::uint16_t>((dir > 0) != negative ? bits + 1 : bits - 1);
}

bool stable(const std::array<std::uint16_t, 4>& q) { return half_rotor(unit_rotor(q)) == q; }

// Halves whose renormalized value quantizes back to themselves, so a decoded
// model re-encodes to the same bytes.
std::array<std::uint16_t, 4> quantize_rotor(const Eigen::Vector4d& rotor) {
  const double n = rotor.norm();
  const Eigen::Vector4d r = (n > 0.0 && std::isfinite(n)) ? Eigen::Vector4d(rotor / n) : Eigen::Vector4d(1, 0, 0, 0);
  auto q = half_rotor(r);
  for (int iter = 0; iter < 8; ++iter) {
    if (stable(q)) return q;
    q = half_rotor(unit_rotor(q));
  }
  // Renormalization cycles between neighbouring halves. Take the stable
  // neighbour (one ulp per component) closest to r.
  const auto base = half_rotor(r);
  std::array<std::uint16_t, 4> best = base;
  double best_err = std::numeric_limits<double>::infinity();
  for (int code = 0; code < 81; ++code) {
    std::array<std::uint16_t, 4> c = base;
    for (int i = 0, k = code; i < 4; ++i, k /= 3)
      if (k % 3 != 2) c[i] = half_step(c[i], k % 3 == 0 ? -1 : 1);
    if (!stable(c)) continue;
    const double err = (unit_rotor(c) - r).squaredNorm();
    if (err < best_err) best_err = err, best = c;
  }
  if (!stable(best)) fail(ErrorKind::Integrity, "quantize: no stable half-precision rotor");
  return best;
}

void canonical_zero(std::uint16_t& bits) {
  if (bits == 0x8000) bits = 0;
}

}  // namespace

QuantizedGaussian quantize(const Gaussian4D& g) {
  if (!is_finite(g)) fail(ErrorKind::InvalidParameter, "quantize: non-finite Gaussian");
  QuantizedGaussian q;
  const Eigen::Vector4d s = clamped_scale(g.scale);
  for (int i = 0; i < 4; ++i) {
    q.mean[i] = static_cast<float>(g.mean[i]);
    q.log_scale[i] = to_half(std::log(s[i]));
  }
  const auto l = quantize_rotor(g.rotor_left), r = quantize_rotor(g.rotor_right);
  std::copy(l.begin(), l.end(), q.rotors.begin());
  std::copy(r.begin(), r.end(), q.rotors.begin() + 4);
  q.opacity = to_unorm8(g.opacity);
  for (int i = 0; i < 3; ++i) q.base_color[i] = to_unorm8(g.base_color[i]);
  for (int i = 0; i < kShCoeffs; ++i) {
    q.sh[i] = to_half(g.sh_residual[i]);
    canonical_zero(q.sh[i]);
  }
  return q;
}

Gaussian4D dequantize(const QuantizedGaussian& q) {
  Gaussian4D g;
  for (int i = 0; i < 4; ++i) {
    g.mean[i] = static_cast<double>(q.mean[i]);
    g.scale[i] = std::exp(from_half(q.log_scale[i]));
  }
  g.rotor_left = unit_rotor({q.rotors[0], q.rotors[1], q.rotors[2], q.rotors[3]});
  g.rotor_right = unit_rotor({q.rotors[4], q.rotors[5], q.rotors[6], q.rotors[7]});
  g.opacity = q.opacity / 255.0;
  for (int i = 0; i < 3; ++i) g.base_color[i] = q.base_color[i] / 255.0;
  for (int i = 0; i < kShCoeffs; ++i) g.sh_residual[i] = from_half(q.sh[i]);
  return g;
}

Gaussian4D quantize_roundtrip(const Gaussian4D& g) { return dequantize(quantize(g)); }

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'T', 'G', 'H', '1'};
constexpr std::uint16_t kEndianMarker = 0xFEFF;
constexpr std::uint16_t kGlobalTag = 0xFFFF;
constexpr std::size_t kChecksumBytes = 8;

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  template <class T>
  void put(T value) {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
      put(std::bit_cast<U>(value));
    } else {
      using U = std::make_unsigned_t<T>;
      auto u = static_cast<U>(value);
      for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    }
  }
  void put_bytes(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes, std::size_t pos = 0) : bytes_(bytes), pos_(pos) {}

  template <class T>
  T get() {
    if constexpr (std::is_floating_point_v<T>) {
      using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
      return std::bit_cast<T>(get<U>());
    } else {
      need(sizeof(T));
      using U = std::make_unsigned_t<T>;
      U u = 0;
      for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(U{bytes_[pos_ + i]} << (8 * i));
      pos_ += sizeof(T);
      return static_cast<T>(u);
    }
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(ErrorKind::Parse, "model: truncated file");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
};

void put_record(Writer& w, const QuantizedGaussian& q) {
  for (const float m : q.mean) w.put(m);
  for (const auto s : q.log_scale) w.put(s);
  for (const auto r : q.rotors) w.put(r);
  w.put(q.opacity);
  for (const auto c : q.base_color) w.put(c);
}

QuantizedGaussian get_record(Reader& r) {
  QuantizedGaussian q;
  for (auto& m : q.mean) m = r.get<float>();
  for (auto& s : q.log_scale) s = r.get<std::uint16_t>();
  for (auto& x : q.rotors) x = r.get<std::uint16_t>();
  q.opacity = r.get<std::uint8_t>();
  for (auto& c : q.base_color) c = r.get<std::uint8_t>();
  return q;
}

void put_sh(std::vector<std::uint8_t>& out, const QuantizedGaussian& q) {
  for (const auto s : q.sh) {
    out.push_back(static_cast<std::uint8_t>(s & 0xFF));
    out.push_back(static_cast<std::uint8_t>(s >> 8));
  }
}

bool sh_is_zero(const QuantizedGaussian& q) {
  return std::all_of(q.sh.begin(), q.sh.end(), [](std::uint16_t s) { return s == 0; });
}

// Global last, bounded segments level-major.
bool file_order(const SegmentRef& a, const SegmentRef& b) {
  if (a.is_global() != b.is_global()) return b.is_global();
  return a < b;
}

void check_magic(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
    fail(ErrorKind::Parse, "model: bad magic");
}

struct Parsed {
  ModelHeader header;
  std::vector<DirectoryEntry> directory;
  std::vector<QuantizedGaussian> records;  // file order, SH filled
};

ModelHeader parse_header(std::span<const std::uint8_t> bytes) {
  check_magic(bytes);
  Reader r(bytes, kMagic.size());
  ModelHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kFormatVersion)
    fail(ErrorKind::Version, "model: unsupported format version " + std::to_string(h.version));
  if (r.get<std::uint16_t>() != kEndianMarker) fail(ErrorKind::Parse, "model: bad endianness marker");
  if (bytes.size() < kHeaderBytes + kChecksumBytes) fail(ErrorKind::Parse, "model: truncated file");

  const std::size_t body = bytes.size() - kChecksumBytes;
  Reader tail(bytes, body);
  if (tail.get<std::uint64_t>() != crc64(bytes.first(body))) fail(ErrorKind::Integrity, "model: checksum mismatch");

  h.duration = r.get<double>();
  h.root_length = r.get<double>();
  h.num_levels = r.get<std::uint32_t>();
  r.get<std::uint32_t>();
  h.o_th = r.get<double>();
  h.gaussian_count = r.get<std::uint64_t>();
  h.view_dependent_count = r.get<std::uint64_t>();
  h.directory_entries = r.get<std::uint32_t>();
  r.get<std::uint32_t>();
  h.directory_bytes = r.get<std::uint64_t>();
  h.geometry_bytes = r.get<std::uint64_t>();
  h.table_bytes = r.get<std::uint64_t>();
  h.stream_bytes = r.get<std::uint64_t>();
  h.stream_bits = r.get<std::uint64_t>();

  auto bad = [](const char* what) { fail(ErrorKind::Integrity, std::string("model: ") + what); };
  if (h.view_dependent_count > h.gaussian_count) bad("view-dependent count exceeds population");
  if (h.directory_bytes != std::uint64_t{h.directory_entries} * kDirectoryEntryBytes) bad("directory size");
  if (h.gaussian_count > body / kGeometryBytesPerGaussian ||
      h.geometry_bytes != h.gaussian_count * kGeometryBytesPerGaussian)
    bad("geometry size");
  if (h.table_bytes != 256) bad("table size");
  if (h.stream_bytes != (h.stream_bits + 7) / 8) bad("stream size");
  const std::uint64_t expected =
      kHeaderBytes + h.directory_bytes + h.geometry_bytes + h.table_bytes + h.stream_bytes + kChecksumBytes;
  if (expected != bytes.size()) bad("section sizes do not sum to the file size");
  return h;
}

std::vector<DirectoryEntry> parse_directory(std::span<const std::uint8_t> bytes, const ModelHeader& h) {
  Reader r(bytes, kHeaderBytes);
  std::vector<DirectoryEntry> dir(h.directory_entries);
  std::uint64_t next = 0, view_dependent = 0;
  for (auto& e : dir) {
    const auto level = r.get<std::uint16_t>();
    r.get<std::uint16_t>();
    e.count = r.get<std::uint32_t>();
    const auto index = r.get<std::int64_t>();
    e.ref = level == kGlobalTag ? SegmentRef::global() : SegmentRef{static_cast<int>(level), index};
    e.first = r.get<std::uint64_t>();
    e.diffuse = r.get<std::uint32_t>();
    r.get<std::uint32_t>();
    if (e.count == 0 || e.first != next || e.diffuse > e.count)
      fail(ErrorKind::Integrity, "model: inconsistent directory entry " + to_string(e.ref));
    if (!e.ref.is_global() && e.ref.level >= static_cast<int>(h.num_levels))
      fail(ErrorKind::Integrity, "model: directory level out of range");
    next += e.count;
    view_dependent += e.count - e.diffuse;
  }
  for (std::size_t i = 1; i < dir.size(); ++i)
    if (!file_order(dir[i - 1].ref, dir[i].ref)) fail(ErrorKind::Integrity, "model: directory out of order");
  if (next != h.gaussian_count || view_dependent != h.view_dependent_count)
    fail(ErrorKind::Integrity, "model: directory counts disagree with the header");
  return dir;
}

Parsed parse(std::span<const std::uint8_t> bytes) {
  Parsed p;
  p.header = parse_header(bytes);
  p.directory = parse_directory(bytes, p.header);
  const ModelHeader& h = p.header;

  Reader r(bytes, kHeaderBytes + h.directory_bytes);
  p.records.reserve(h.gaussian_count);
  for (std::uint64_t i = 0; i < h.gaussian_count; ++i) p.records.push_back(get_record(r));

  huffman::Lengths lengths{};
  const auto table = r.take(256);
  std::copy(table.begin(), table.end(), lengths.begin());
  for (const auto l : lengths)
    if (l > huffman::kMaxCodeLength) fail(ErrorKind::Integrity, "model: code length out of range");
  huffman::Bitstream stream;
  const auto payload = r.take(h.stream_bytes);
  stream.bytes.assign(payload.begin(), payload.end());
  stream.bits = h.stream_bits;
  const auto sh = huffman::decode(stream, lengths, h.view_dependent_count * kShBytesPerGaussian);

  std::size_t cursor = 0;
  for (const auto& e : p.directory) {
    for (std::uint32_t k = e.diffuse; k < e.count; ++k) {
      auto& q = p.records[e.first + k];
      for (int c = 0; c < kShCoeffs; ++c, cursor += 2)
        q.sh[c] = static_cast<std::uint16_t>(sh[cursor] | (sh[cursor + 1] << 8));
      if (sh_is_zero(q)) fail(ErrorKind::Integrity, "model: view-dependent record with zero residual");
    }
  }
  return p;
}

}  // namespace

std::vector<std::uint8_t> encode(const Hierarchy& h) {
  const AuditReport audit = h.audit();
  if (!audit.ok()) fail(ErrorKind::Integrity, "encode: hierarchy audit failed: " + audit.problems.front());
  const HierarchyGeometry& geo = h.geometry();

  struct Member {
    GaussianId id;
    QuantizedGaussian q;
    bool diffuse;
  };
  std::map<SegmentRef, std::vector<Member>, decltype(&file_order)> segments(&file_order);
  for (const GaussianId id : h.ids()) {
    const QuantizedGaussian q = quantize(h.get(id));
    const InfluenceRange range = influence_range(dequantize(q), h.o_th());
    segments[geo.locate(range.start, range.end)].push_back({id, q, sh_is_zero(q)});
  }

  Writer dir, geometry;
  std::vector<std::uint8_t> sh_bytes;
  std::uint64_t count = 0, view_dependent = 0;
  for (auto& [ref, members] : segments) {
    std::stable_partition(members.begin(), members.end(), [](const Member& m) { return m.diffuse; });
    const auto diffuse = std::count_if(members.begin(), members.end(), [](const Member& m) { return m.diffuse; });
    dir.put(ref.is_global() ? kGlobalTag : static_cast<std::uint16_t>(ref.level));
    dir.put(std::uint16_t{0});
    dir.put(static_cast<std::uint32_t>(members.size()));
    dir.put(ref.is_global() ? std::int64_t{0} : ref.index);
    dir.put(count);
    dir.put(static_cast<std::uint32_t>(diffuse));
    dir.put(std::uint32_t{0});
    for (const Member& m : members) {
      put_record(geometry, m.q);
      if (!m.diffuse) put_sh(sh_bytes, m.q);
    }
    count += members.size();
    view_dependent += members.size() - static_cast<std::size_t>(diffuse);
  }

  std::array<std::uint64_t, 256> freq{};
  for (const auto b : sh_bytes) ++freq[b];
  const huffman::Lengths lengths = huffman::code_lengths(freq);
  const huffman::Bitstream stream = huffman::encode(sh_bytes, lengths);

  Writer out;
  out.put_bytes(kMagic);
  out.put(kFormatVersion);
  out.put(kEndianMarker);
  out.put(geo.duration());
  out.put(geo.root_length());
  out.put(static_cast<std::uint32_t>(geo.num_levels()));
  out.put(std::uint32_t{0});
  out.put(h.o_th());
  out.put(count);
  out.put(view_dependent);
  out.put(static_cast<std::uint32_t>(segments.size()));
  out.put(std::uint32_t{0});
  out.put(static_cast<std::uint64_t>(dir.bytes.size()));
  out.put(static_cast<std::uint64_t>(geometry.bytes.size()));
  out.put(std::uint64_t{256});
  out.put(static_cast<std::uint64_t>(stream.bytes.size()));
  out.put(stream.bits);
  out.put_bytes(dir.bytes);
  out.put_bytes(geometry.bytes);
  out.put_bytes(lengths);
  out.put_bytes(stream.bytes);
  out.put(crc64(out.bytes));
  return std::move(out.bytes);
}

Hierarchy decode(std::span<const std::uint8_t> bytes) {
  const Parsed p = parse(bytes);
  const ModelHeader& hdr = p.header;
  if (hdr.num_levels < 1 || hdr.num_levels > static_cast<std::uint32_t>(kMaxLevels))
    fail(ErrorKind::Integrity, "model: level count out of range");
  Hierarchy h = [&] {
    try {
      return Hierarchy::build(hdr.duration, hdr.root_length, static_cast<int>(hdr.num_levels), hdr.o_th);
    } catch (const Error& e) {
      fail(ErrorKind::Integrity, std::string("model: invalid hierarchy geometry: ") + e.what());
    }
  }();
  for (const auto& e : p.directory) {
    for (std::uint32_t k = 0; k < e.count; ++k) {
      const GaussianId id = h.insert(dequantize(p.records[e.first + k]));
      if (h.placement(id) != e.ref)
        fail(ErrorKind::Integrity, "model: Gaussian " + std::to_string(e.first + k) + " does not belong in " +
                                       to_string(e.ref));
    }
  }
  return h;
}

ModelHeader read_header(std::span<const std::uint8_t> bytes) { return parse_header(bytes); }

std::vector<DirectoryEntry> read_directory(std::span<const std::uint8_t> bytes) {
  return parse_directory(bytes, parse_header(bytes));
}

std::vector<std::uint8_t> appearance_layout(std::span<const std::uint8_t> bytes) {
  const Parsed p = parse(bytes);
  std::vector<std::uint8_t> out;
  out.reserve(p.records.size() * kShBytesPerGaussian);
  for (const auto& q : p.records) put_sh(out, q);
  return out;
}

SizeReport size_report(std::span<const std::uint8_t> bytes) {
  const ModelHeader h = parse_header(bytes);
  SizeReport r;
  r.header = kHeaderBytes;
  r.directory = h.directory_bytes;
  r.geometry = h.geometry_bytes;
  r.appearance_table = h.table_bytes;
  r.appearance_stream = h.stream_bytes;
  r.checksum = kChecksumBytes;
  r.raw_appearance = h.gaussian_count * kShBytesPerGaussian;
  return r;
}

void write_model(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::NotFound, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::NotFound, "failed writing " + path.string());
}

std::vector<std::uint8_t> read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::NotFound, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace tgh
