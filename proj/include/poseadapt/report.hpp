#pragma once

// Run provenance and reporting: content hashing, CSV emission, a dependency-
// free SVG histogram, and the per-run manifest that records what a command
// read, wrote, and was configured with. Reruns from identical inputs must
// produce byte-identical outputs, so every writer here is deterministic.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace poseadapt {

// ---------------------------------------------------------------------------
// SHA-256 (FIPS 180-4)
// ---------------------------------------------------------------------------

namespace detail {

class Sha256 {
 public:
  Sha256() { reset(); }

  void reset() {
    h_ = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
          0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
    len_ = 0;
    buf_fill_ = 0;
  }

  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    len_ += n;
    while (n > 0) {
      const std::size_t take = std::min<std::size_t>(n, 64 - buf_fill_);
      std::memcpy(buf_.data() + buf_fill_, p, take);
      buf_fill_ += take;
      p += take;
      n -= take;
      if (buf_fill_ == 64) {
        compress(buf_.data());
        buf_fill_ = 0;
      }
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = len_ * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    const unsigned char zero = 0;
    while (buf_fill_ != 56) update(&zero, 1);
    unsigned char lenb[8];
    for (int i = 0; i < 8; ++i) lenb[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(lenb, 8);
    static const char* kHex = "0123456789abcdef";
    std::string out(64, '0');
    for (int i = 0; i < 8; ++i) {
      for (int b = 0; b < 4; ++b) {
        const unsigned v = (h_[i] >> (24 - 8 * b)) & 0xffu;
        out[static_cast<std::size_t>(i * 8 + b * 2)] = kHex[v >> 4];
        out[static_cast<std::size_t>(i * 8 + b * 2 + 1)] = kHex[v & 0xf];
      }
    }
    reset();
    return out;
  }

 private:
  static std::uint32_t rotr(std::uint32_t x, int s) { return (x >> s) | (x << (32 - s)); }

  void compress(const unsigned char* p) {
    static constexpr std::array<std::uint32_t, 64> K = {
        0x428a2f98u, 0x71374491u, 0xb5c0fbcfu, 0xe9b5dba5u, 0x3956c25bu, 0x59f111f1u,
        0x923f82a4u, 0xab1c5ed5u, 0xd807aa98u, 0x12835b01u, 0x243185beu, 0x550c7dc3u,
        0x72be5d74u, 0x80deb1feu, 0x9bdc06a7u, 0xc19bf174u, 0xe49b69c1u, 0xefbe4786u,
        0x0fc19dc6u, 0x240ca1ccu, 0x2de92c6fu, 0x4a7484aau, 0x5cb0a9dcu, 0x76f988dau,
        0x983e5152u, 0xa831c66du, 0xb00327c8u, 0xbf597fc7u, 0xc6e00bf3u, 0xd5a79147u,
        0x06ca6351u, 0x14292967u, 0x27b70a85u, 0x2e1b2138u, 0x4d2c6dfcu, 0x53380d13u,
        0x650a7354u, 0x766a0abbu, 0x81c2c92eu, 0x92722c85u, 0xa2bfe8a1u, 0xa81a664bu,
        0xc24b8b70u, 0xc76c51a3u, 0xd192e819u, 0xd6990624u, 0xf40e3585u, 0x106aa070u,
        0x19a4c116u, 0x1e376c08u, 0x2748774cu, 0x34b0bcb5u, 0x391c0cb3u, 0x4ed8aa4au,
        0x5b9cca4fu, 0x682e6ff3u, 0x748f82eeu, 0x78a5636fu, 0x84c87814u, 0x8cc70208u,
        0x90befffau, 0xa4506cebu, 0xbef9a3f7u, 0xc67178f2u};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    }
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3];
    std::uint32_t e = h_[4], f = h_[5], g = h_[6], h = h_[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t S1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = h + S1 + ch + K[static_cast<std::size_t>(i)] + w[i];
      const std::uint32_t S0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = S0 + maj;
      h = g; g = f; f = e; e = d + t1;
      d = c; c = b; b = a; a = t1 + t2;
    }
    h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d;
    h_[4] += e; h_[5] += f; h_[6] += g; h_[7] += h;
  }

  std::array<std::uint32_t, 8> h_{};
  std::array<unsigned char, 64> buf_{};
  std::uint64_t len_ = 0;
  std::size_t buf_fill_ = 0;
};

}  // namespace detail

inline std::string sha256_hex(const std::string& bytes) {
  detail::Sha256 s;
  s.update(bytes.data(), bytes.size());
  return s.hex_digest();
}

inline std::string sha256_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("sha256_file: cannot open " + path);
  detail::Sha256 s;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    s.update(buf, static_cast<std::size_t>(is.gcount()));
  }
  return s.hex_digest();
}

// File: its content hash. Directory: hash of "relpath\n hash\n" lines for
// every regular file, sorted by generic (slash-normalized) relative path, so
// the digest is stable across platforms and traversal orders.
inline std::string hash_path(const std::string& path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(path)) return sha256_file(path);
  if (!fs::is_directory(path)) throw std::runtime_error("hash_path: no such file or directory: " + path);
  std::vector<std::string> rels;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    if (e.is_regular_file()) rels.push_back(fs::relative(e.path(), path).generic_string());
  }
  std::sort(rels.begin(), rels.end());
  detail::Sha256 s;
  for (const auto& r : rels) {
    const std::string line = r + "\n" + sha256_file((fs::path(path) / r).string()) + "\n";
    s.update(line.data(), line.size());
  }
  return s.hex_digest();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

// Shortest decimal string that round-trips the exact double (%.17g is always
// sufficient; shorter forms are used when they parse back bit-identically).
inline std::string fmt_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v || (back != back && v != v)) return buf;
  }
  return buf;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline void write_csv(const std::string& path, const CsvTable& t) {
  std::ostringstream os;
  for (std::size_t c = 0; c < t.header.size(); ++c) os << (c ? "," : "") << t.header[c];
  os << "\n";
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw std::runtime_error("write_csv: ragged row in " + path);
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
    os << "\n";
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_csv: cannot open " + path);
  f << os.str();
  if (!f) throw std::runtime_error("write_csv: write failed for " + path);
}

// ---------------------------------------------------------------------------
// SVG histogram overlay (two series on a shared binning)
// ---------------------------------------------------------------------------

struct HistogramSeries {
  std::string label;
  std::string color;  // SVG fill
  std::vector<std::size_t> counts;
};

// Bars drawn at half opacity so the overlap region reads as a blend. Pure
// text output: no plotting dependency, stable bytes for identical inputs.
inline void write_histogram_svg(const std::string& path, const std::vector<double>& bin_left,
                                double bin_width, const std::vector<HistogramSeries>& series,
                                const std::string& title, const std::string& x_label) {
  if (bin_left.empty() || series.empty()) {
    throw std::invalid_argument("write_histogram_svg: empty bins or series");
  }
  for (const auto& s : series) {
    if (s.counts.size() != bin_left.size()) {
      throw std::invalid_argument("write_histogram_svg: series size mismatch");
    }
  }
  const double W = 720, H = 440, ml = 64, mr = 24, mt = 46, mb = 56;
  const double pw = W - ml - mr, ph = H - mt - mb;
  std::size_t cmax = 1;
  for (const auto& s : series) {
    for (std::size_t c : s.counts) cmax = std::max(cmax, c);
  }
  const double x0 = bin_left.front();
  const double x1 = bin_left.back() + bin_width;
  const double xspan = (x1 > x0) ? x1 - x0 : 1.0;
  auto px = [&](double x) { return ml + (x - x0) / xspan * pw; };
  auto py = [&](double c) { return mt + ph - c / static_cast<double>(cmax) * ph; };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof(b), "%.6g", v);
    return std::string(b);
  };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        "font-size=\"16\">" << title << "</text>\n";
  // Axes.
  os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
     << mt + ph << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
     << "\" stroke=\"black\"/>\n";
  // Ticks: four x positions, four y counts.
  for (int i = 0; i <= 3; ++i) {
    const double xv = x0 + xspan * i / 3.0;
    os << "<line x1=\"" << px(xv) << "\" y1=\"" << mt + ph << "\" x2=\"" << px(xv) << "\" y2=\""
       << mt + ph + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(xv) << "\" y=\"" << mt + ph + 20
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << num(xv)
       << "</text>\n";
    const double cv = cmax * i / 3.0;
    os << "<line x1=\"" << ml - 5 << "\" y1=\"" << py(cv) << "\" x2=\"" << ml << "\" y2=\""
       << py(cv) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(cv) + 4
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" << num(cv)
       << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 14
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << x_label
     << "</text>\n";
  os << "<text x=\"18\" y=\"" << mt + ph / 2
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 "
     << mt + ph / 2 << ")\">count</text>\n";
  // Bars.
  for (const auto& s : series) {
    for (std::size_t b = 0; b < bin_left.size(); ++b) {
      if (s.counts[b] == 0) continue;
      const double x = px(bin_left[b]);
      const double w = px(bin_left[b] + bin_width) - x;
      const double y = py(static_cast<double>(s.counts[b]));
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\""
         << mt + ph - y << "\" fill=\"" << s.color << "\" fill-opacity=\"0.5\"/>\n";
    }
  }
  // Legend.
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double lx = ml + pw - 150, ly = mt + 10 + 22 * static_cast<double>(i);
    os << "<rect x=\"" << lx << "\" y=\"" << ly << "\" width=\"14\" height=\"14\" fill=\""
       << series[i].color << "\" fill-opacity=\"0.5\"/>\n";
    os << "<text x=\"" << lx + 20 << "\" y=\"" << ly + 12
       << "\" font-family=\"sans-serif\" font-size=\"13\">" << series[i].label << "</text>\n";
  }
  os << "</svg>\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_histogram_svg: cannot open " + path);
  f << os.str();
  if (!f) throw std::runtime_error("write_histogram_svg: write failed for " + path);
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

// One manifest per command output directory: the command, the hash of the
// resolved configuration, the seed actually used, content hashes of every
// input and output path, and coarse timing. Two runs that agree on command,
// config hash, seed, and input hashes must agree on output hashes.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> content hash
  std::map<std::string, std::string> outputs;  // path -> content hash
  double wall_seconds = 0.0;

  nlohmann::json to_json() const {
    return {{"command", command},
            {"config_hash", config_hash},
            {"seed", seed},
            {"inputs", inputs},
            {"outputs", outputs},
            {"wall_seconds", wall_seconds}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    j.at("command").get_to(m.command);
    j.at("config_hash").get_to(m.config_hash);
    j.at("seed").get_to(m.seed);
    j.at("inputs").get_to(m.inputs);
    j.at("outputs").get_to(m.outputs);
    j.at("wall_seconds").get_to(m.wall_seconds);
    return m;
  }
};

inline void save_manifest(const std::string& dir, const RunManifest& m) {
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_manifest: cannot open " + path);
  os << m.to_json().dump(2) << "\n";
  if (!os) throw std::runtime_error("save_manifest: write failed for " + path);
}

inline RunManifest load_manifest(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_manifest: cannot open " + path);
  nlohmann::json j;
  is >> j;
  return RunManifest::from_json(j);
}

// Wall-clock stopwatch for manifest timing.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace poseadapt
