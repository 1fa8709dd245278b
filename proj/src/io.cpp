#include "mfid/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "mfid/error.hpp"

namespace mfid {

std::string format_real(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) fail(ErrorCode::Io, "cannot open " + path + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
  out_.flush();
}

CsvWriter& CsvWriter::cell(double x) {
  out_ << (first_ ? "" : ",") << format_real(x);
  first_ = false;
  return *this;
}

CsvWriter& CsvWriter::cell(long long x) {
  out_ << (first_ ? "" : ",") << x;
  first_ = false;
  return *this;
}

void CsvWriter::end_row() {
  out_ << '\n';
  out_.flush();
  first_ = true;
  if (!out_) fail(ErrorCode::Io, "write to " + path_ + " failed");
}

namespace {

constexpr const char* kMagic = "mfid-params v1";

std::uint64_t to_little(std::uint64_t x) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(x);
  return x;
}

}  // namespace

std::vector<Segment> flat_segments(const std::string& name, std::size_t n) {
  return {Segment{name, {n}, 0}};
}

void write_params(const std::string& path, const std::vector<Segment>& segments,
                  const std::vector<double>& values) {
  std::size_t total = 0;
  for (const auto& s : segments) {
    require(s.offset == total, "write_params: segments must tile the vector in order");
    require(s.name.find_first_of(" \n") == std::string::npos, "write_params: bad segment name");
    total += s.size();
  }
  require(total == values.size(), "write_params: segments do not cover the values");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path + " for writing");
  out << kMagic << '\n';
  for (const auto& s : segments) {
    out << "segment " << s.name;
    for (auto d : s.dims) out << ' ' << d;
    out << '\n';
  }
  out << "end\n";
  for (double v : values) {
    const auto bits = to_little(std::bit_cast<std::uint64_t>(v));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) fail(ErrorCode::Io, "write to " + path + " failed");
}

ParamFile read_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open parameter file " + path);
  std::string line;
  if (!std::getline(in, line) || line != kMagic)
    fail(ErrorCode::Io, path + ": not a parameter file");
  ParamFile pf;
  std::size_t offset = 0;
  while (true) {
    if (!std::getline(in, line)) fail(ErrorCode::Io, path + ": truncated header");
    if (line == "end") break;
    std::istringstream ls(line);
    std::string tag;
    Segment s;
    ls >> tag >> s.name;
    if (tag != "segment" || s.name.empty()) fail(ErrorCode::Io, path + ": bad header line: " + line);
    std::size_t d;
    while (ls >> d) s.dims.push_back(d);
    if (s.dims.empty()) fail(ErrorCode::Io, path + ": segment without dimensions");
    s.offset = offset;
    offset += s.size();
    pf.segments.push_back(std::move(s));
  }
  pf.values.resize(offset);
  for (double& v : pf.values) {
    std::uint64_t bits;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits))
      fail(ErrorCode::Io, path + ": fewer values than the header declares");
    v = std::bit_cast<double>(to_little(bits));
  }
  if (in.peek() != std::char_traits<char>::eof())
    fail(ErrorCode::Io, path + ": trailing bytes after the declared values");
  return pf;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::Io, "cannot create directory " + dir + ": " + ec.message());
}

std::string join_path(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

}  // namespace mfid
