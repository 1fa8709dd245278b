#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "mfid/mechnet.hpp"

namespace mfid {

/// Shortest-round-trip-safe decimal: 17 significant digits, "C" locale.
std::string format_real(double x);

/// Writes one row per call and flushes, so a run that aborts keeps the rows
/// it already produced.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  CsvWriter& cell(double x);
  CsvWriter& cell(long long x);
  CsvWriter& cell(int x) { return cell(static_cast<long long>(x)); }
  void end_row();

 private:
  std::ofstream out_;
  std::string path_;
  bool first_ = true;
};

/// Text header ("mfid-params v1", one "segment <name> <dims...>" line per
/// segment, "end") followed by the values as little-endian float64.
void write_params(const std::string& path, const std::vector<Segment>& segments,
                  const std::vector<double>& values);

struct ParamFile {
  std::vector<Segment> segments;
  std::vector<double> values;
};

ParamFile read_params(const std::string& path);

/// A single unnamed segment covering the whole vector.
std::vector<Segment> flat_segments(const std::string& name, std::size_t n);

std::uint64_t fnv1a64(std::string_view data);

void ensure_directory(const std::string& dir);
std::string join_path(const std::string& dir, const std::string& file);

}  // namespace mfid
