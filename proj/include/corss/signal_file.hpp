#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "corss/types.hpp"

namespace corss {

/// Binary recording format.
///
/// The first line is an ASCII header padded with spaces to kSignalHeaderBytes
/// (newline included):
///
///   CORSSSIG v1 n_ch=8 rate=1000 samples=120000 encoding=f32le
///
/// followed by channel-interleaved little-endian float32 frames. The fixed
/// width lets a streaming writer refresh `samples` in place.
inline constexpr std::size_t kSignalHeaderBytes = 128;
inline constexpr const char* kSignalMagic = "CORSSSIG";

struct SignalHeader {
  int n_ch = 0;
  double sample_rate = 0.0;
  std::int64_t samples = 0;

  std::int64_t frame_bytes() const { return static_cast<std::int64_t>(n_ch) * 4; }
};

namespace detail {

inline std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

inline std::string format_header(const SignalHeader& h) {
  std::ostringstream os;
  os.precision(17);
  os << kSignalMagic << " v1 n_ch=" << h.n_ch << " rate=" << h.sample_rate
     << " samples=" << h.samples << " encoding=f32le";
  std::string s = os.str();
  if (s.size() + 1 > kSignalHeaderBytes) throw Error(ErrorCode::invalid_argument, "header too long");
  s.resize(kSignalHeaderBytes - 1, ' ');
  s.push_back('\n');
  return s;
}

inline SignalHeader parse_header(const std::string& line) {
  std::istringstream is(line);
  std::string magic, version, tok;
  is >> magic >> version;
  if (magic != kSignalMagic) throw Error(ErrorCode::parse_error, "not a signal file (bad magic)");
  if (version != "v1") throw Error(ErrorCode::parse_error, "unsupported version '" + version + "'");
  SignalHeader h;
  bool have_ch = false, have_rate = false, have_n = false, have_enc = false;
  while (is >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::parse_error, "bad header field '" + tok + "'");
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    try {
      std::size_t used = 0;
      if (key == "n_ch") {
        h.n_ch = std::stoi(val, &used);
        have_ch = true;
      } else if (key == "rate") {
        h.sample_rate = std::stod(val, &used);
        have_rate = true;
      } else if (key == "samples") {
        h.samples = std::stoll(val, &used);
        have_n = true;
      } else if (key == "encoding") {
        if (val != "f32le") throw Error(ErrorCode::parse_error, "unsupported encoding '" + val + "'");
        used = val.size();
        have_enc = true;
      } else {
        throw Error(ErrorCode::parse_error, "unknown header field '" + key + "'");
      }
      if (used != val.size()) throw std::invalid_argument(val);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::parse_error, "bad value in header field '" + tok + "'");
    }
  }
  if (!(have_ch && have_rate && have_n && have_enc)) {
    throw Error(ErrorCode::parse_error, "header is missing a field");
  }
  if (h.n_ch < 1 || !(h.sample_rate > 0.0) || h.samples < 0) {
    throw Error(ErrorCode::parse_error, "header values out of range");
  }
  return h;
}

}  // namespace detail

/// Appends frames to a signal file, refreshing the header sample count after
/// every append so an interrupted writer leaves a readable prefix.
class SignalWriter {
 public:
  SignalWriter(const std::filesystem::path& path, int n_ch, double sample_rate)
      : path_(path), header_{n_ch, sample_rate, 0} {
    if (n_ch < 1 || !(sample_rate > 0.0)) {
      throw Error(ErrorCode::invalid_argument, "signal file needs n_ch >= 1 and a positive rate");
    }
    out_.open(path, std::ios::binary | std::ios::trunc | std::ios::out);
    if (!out_) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
    write_header();
  }

  void append(const Eigen::Ref<const Matrix>& frames) {
    if (frames.rows() != header_.n_ch) {
      throw Error(ErrorCode::shape_error, "frame has " + std::to_string(frames.rows()) +
                                              " channels, file has " + std::to_string(header_.n_ch));
    }
    buf_.resize(static_cast<std::size_t>(frames.size()) * 4);
    std::size_t k = 0;
    for (Eigen::Index t = 0; t < frames.cols(); ++t) {
      for (Eigen::Index c = 0; c < frames.rows(); ++c) {
        const std::uint32_t w = detail::to_le(std::bit_cast<std::uint32_t>(static_cast<float>(frames(c, t))));
        std::memcpy(buf_.data() + k, &w, 4);
        k += 4;
      }
    }
    out_.seekp(0, std::ios::end);
    out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    out_.flush();
    header_.samples += frames.cols();
    write_header();
    if (!out_) throw Error(ErrorCode::io_error, "write failed on " + path_.string());
  }

  const SignalHeader& header() const { return header_; }

  void close() {
    if (out_.is_open()) out_.close();
  }

 private:
  void write_header() {
    const std::string h = detail::format_header(header_);
    out_.seekp(0);
    out_.write(h.data(), static_cast<std::streamsize>(h.size()));
    out_.flush();
  }

  std::filesystem::path path_;
  SignalHeader header_;
  std::ofstream out_;
  std::vector<char> buf_;
};

/// Sequential reader. In strict mode the payload must hold exactly the
/// declared sample count. With allow_truncated, only whole frames present on
/// disk (and declared in the header) are read.
class SignalReader {
 public:
  explicit SignalReader(const std::filesystem::path& path, bool allow_truncated = false)
      : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw Error(ErrorCode::io_error, "cannot open " + path.string());
    std::string line(kSignalHeaderBytes, '\0');
    in_.read(line.data(), static_cast<std::streamsize>(kSignalHeaderBytes));
    if (in_.gcount() != static_cast<std::streamsize>(kSignalHeaderBytes) || line.back() != '\n') {
      throw Error(ErrorCode::parse_error, path.string() + ": truncated or malformed header");
    }
    header_ = detail::parse_header(line);
    const auto payload = static_cast<std::int64_t>(std::filesystem::file_size(path)) -
                         static_cast<std::int64_t>(kSignalHeaderBytes);
    const std::int64_t frames_on_disk = payload / header_.frame_bytes();
    if (!allow_truncated && payload != header_.samples * header_.frame_bytes()) {
      throw Error(ErrorCode::stream_corrupt,
                  path.string() + ": payload holds " + std::to_string(payload) + " bytes, header declares " +
                      std::to_string(header_.samples * header_.frame_bytes()));
    }
    available_ = std::min(frames_on_disk, header_.samples);
  }

  const SignalHeader& header() const { return header_; }
  std::int64_t available() const { return available_; }
  std::int64_t position() const { return position_; }

  /// Next block of at most max_frames samples, or nullopt at the end.
  std::optional<MultichannelBlock> next(std::int64_t max_frames) {
    const std::int64_t len = std::min(max_frames, available_ - position_);
    if (len <= 0) return std::nullopt;
    buf_.resize(static_cast<std::size_t>(len * header_.frame_bytes()));
    in_.read(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (in_.gcount() != static_cast<std::streamsize>(buf_.size())) {
      throw Error(ErrorCode::stream_corrupt, path_.string() + ": unexpected end of payload");
    }
    MultichannelBlock b{Matrix(header_.n_ch, len), position_, header_.sample_rate};
    std::size_t k = 0;
    for (Eigen::Index t = 0; t < len; ++t) {
      for (Eigen::Index c = 0; c < header_.n_ch; ++c) {
        std::uint32_t w;
        std::memcpy(&w, buf_.data() + k, 4);
        k += 4;
        b.samples(c, t) = std::bit_cast<float>(detail::to_le(w));
      }
    }
    position_ += len;
    return b;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  SignalHeader header_;
  std::int64_t available_ = 0;
  std::int64_t position_ = 0;
  std::vector<char> buf_;
};

inline void write_signal_file(const std::filesystem::path& path, const MultichannelBlock& rec) {
  SignalWriter w(path, static_cast<int>(rec.channels()), rec.sample_rate);
  w.append(rec.samples);
  w.close();
}

inline MultichannelBlock read_signal_file(const std::filesystem::path& path, bool allow_truncated = false) {
  SignalReader r(path, allow_truncated);
  auto b = r.next(std::max<std::int64_t>(r.available(), 1));
  if (!b) return {Matrix(r.header().n_ch, 0), 0, r.header().sample_rate};
  return *b;
}

/// CSV with one row per sample and one column per channel. A first row that
/// does not parse as numbers is treated as a header.
inline MultichannelBlock read_csv_signal(const std::filesystem::path& path, double sample_rate) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) numeric = false;
      } catch (const std::logic_error&) {
        numeric = false;
      }
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;
      throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(lineno) + ": not numeric");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(ErrorCode::parse_error, path.string() + ":" + std::to_string(lineno) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::empty_input, path.string() + " has no samples");
  MultichannelBlock b{Matrix(static_cast<Eigen::Index>(rows.front().size()), static_cast<Eigen::Index>(rows.size())),
                      0, sample_rate};
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t c = 0; c < rows[t].size(); ++c)
      b.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = rows[t][c];
  return b;
}

inline void write_csv_signal(const std::filesystem::path& path, const MultichannelBlock& rec) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  out.precision(9);
  for (Eigen::Index c = 0; c < rec.channels(); ++c) out << (c ? "," : "") << "ch" << c;
  out << '\n';
  for (Eigen::Index t = 0; t < rec.length(); ++t) {
    for (Eigen::Index c = 0; c < rec.channels(); ++c) out << (c ? "," : "") << rec.samples(c, t);
    out << '\n';
  }
}

}  // namespace corss
