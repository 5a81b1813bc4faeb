#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tgh/gaussian.hpp"
#include "tgh/hierarchy.hpp"

namespace tgh {

inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::size_t kShBytesPerGaussian = kShCoeffs * 2;  // f16 residuals
inline constexpr std::size_t kGeometryBytesPerGaussian = 44;

/// CRC-64/XZ (reflected ECMA-182 polynomial).
std::uint64_t crc64(std::span<const std::uint8_t> bytes);

namespace huffman {

inline constexpr int kMaxCodeLength = 24;
using Lengths = std::array<std::uint8_t, 256>;

/// Code lengths for a byte histogram; 0 marks an unused symbol. Length-limited
/// by repeatedly flattening the histogram. A single used symbol gets length 1.
Lengths code_lengths(const std::array<std::uint64_t, 256>& freq, int max_length = kMaxCodeLength);

/// Canonical codes: symbols sorted by (length, symbol value).
std::array<std::uint32_t, 256> canonical_codes(const Lengths& lengths);

/// Sum of 2^-len over used symbols.
double kraft_sum(const Lengths& lengths);

struct Bitstream {
  std::vector<std::uint8_t> bytes;  // MSB-first, zero padded
  std::uint64_t bits = 0;
};

/// With a single used symbol the stream is empty; the count alone decodes it.
Bitstream encode(std::span<const std::uint8_t> symbols, const Lengths& lengths);
std::vector<std::uint8_t> decode(const Bitstream& stream, const Lengths& lengths, std::size_t count);

}  // namespace huffman

/// Fixed-size quantized record of one Gaussian, as stored in the geometry section.
struct QuantizedGaussian {
  std::array<float, 4> mean{};
  std::array<std::uint16_t, 4> log_scale{};  // f16 bits
  std::array<std::uint16_t, 8> rotors{};     // f16 bits, left then right
  std::uint8_t opacity = 0;
  std::array<std::uint8_t, 3> base_color{};
  std::array<std::uint16_t, kShCoeffs> sh{};  // f16 bits

  friend bool operator==(const QuantizedGaussian&, const QuantizedGaussian&) = default;
};

QuantizedGaussian quantize(const Gaussian4D& g);
Gaussian4D dequantize(const QuantizedGaussian& q);
/// dequantize(quantize(g)); a fixpoint of quantize afterwards.
Gaussian4D quantize_roundtrip(const Gaussian4D& g);

struct ModelHeader {
  std::uint16_t version = kFormatVersion;
  double duration = 0.0;
  double root_length = 0.0;
  std::uint32_t num_levels = 0;
  double o_th = 0.0;
  std::uint64_t gaussian_count = 0;
  std::uint64_t view_dependent_count = 0;
  std::uint32_t directory_entries = 0;
  std::uint64_t directory_bytes = 0;
  std::uint64_t geometry_bytes = 0;
  std::uint64_t table_bytes = 0;
  std::uint64_t stream_bytes = 0;
  std::uint64_t stream_bits = 0;
};

inline constexpr std::size_t kHeaderBytes = 104;
inline constexpr std::size_t kDirectoryEntryBytes = 32;

struct DirectoryEntry {
  SegmentRef ref;
  std::uint64_t first = 0;  // offset of the first member in file order
  std::uint32_t count = 0;
  std::uint32_t diffuse = 0;  // the first `diffuse` members have zero residual
};

/// Serializes h. Quantizes first and places each Gaussian by its quantized
/// parameters, so the decoded model lands in the recorded segments.
/// Throws Integrity if h fails its audit.
std::vector<std::uint8_t> encode(const Hierarchy& h);

/// Throws Integrity on checksum/structure errors, Version on unknown versions,
/// Parse on bad magic or truncation.
Hierarchy decode(std::span<const std::uint8_t> bytes);

/// Validates checksum and framing, then returns the header.
ModelHeader read_header(std::span<const std::uint8_t> bytes);
std::vector<DirectoryEntry> read_directory(std::span<const std::uint8_t> bytes);

/// Uncompressed residual bytes in file order, diffuse members included.
std::vector<std::uint8_t> appearance_layout(std::span<const std::uint8_t> bytes);

struct SizeReport {
  std::size_t header = 0;
  std::size_t directory = 0;
  std::size_t geometry = 0;
  std::size_t appearance_table = 0;
  std::size_t appearance_stream = 0;
  std::size_t checksum = 0;
  std::size_t raw_appearance = 0;  // gaussian_count * 90, for ratios; not part of the file

  std::size_t appearance() const { return appearance_table + appearance_stream; }
  std::size_t total() const { return header + directory + geometry + appearance_table + appearance_stream + checksum; }
};

SizeReport size_report(std::span<const std::uint8_t> bytes);

void write_model(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_model(const std::filesystem::path& path);

}  // namespace tgh
