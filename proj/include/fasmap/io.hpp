#pragma once

#include "json.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fasmap/antenna.hpp"
#include "fasmap/error.hpp"
#include "fasmap/sampling.hpp"
#include "fasmap/scenario.hpp"
#include "fasmap/solver.hpp"
#include "fasmap/tensor.hpp"

namespace fasmap::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kTensorOrder = "i-major,then j,then m";
inline constexpr const char* kTensorDtype = "float64-le";

/// Formats with enough digits to round-trip any double.
inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline double parse_double(const std::string& token, const std::string& what) {
  const char* begin = token.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw FormatError("bad number '" + token + "' in " + what);
  return v;
}

inline std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw FormatError("cannot read " + path.string());
  return in;
}

inline json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto out = open_out(path, std::ios::out | std::ios::binary);
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

// ---- scenario ----------------------------------------------------------

inline json to_json(const Scenario& s) {
  json obstacles = json::array();
  for (const auto& o : s.obstacles)
    obstacles.push_back({{"min", {o.min_corner.x(), o.min_corner.y()}},
                         {"max", {o.max_corner.x(), o.max_corner.y()}}});
  return {{"width_m", s.width_m},
          {"height_m", s.height_m},
          {"rows", s.rows},
          {"cols", s.cols},
          {"bs_position", {s.bs_position.x(), s.bs_position.y()}},
          {"obstacles", obstacles},
          {"seed", s.seed}};
}

inline Vec2 vec2_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2) throw FormatError(what + " must be a 2-element array");
  return Vec2(j[0].get<double>(), j[1].get<double>());
}

inline Obstacle obstacle_from_json(const json& j) {
  return Obstacle{vec2_from_json(j.at("min"), "obstacle min"), vec2_from_json(j.at("max"), "obstacle max")};
}

inline Scenario scenario_from_json(const json& j) {
  try {
    Scenario s;
    s.width_m = j.at("width_m").get<double>();
    s.height_m = j.at("height_m").get<double>();
    s.rows = j.at("rows").get<std::size_t>();
    s.cols = j.at("cols").get<std::size_t>();
    s.bs_position = vec2_from_json(j.at("bs_position"), "bs_position");
    for (const auto& o : j.at("obstacles")) s.obstacles.push_back(obstacle_from_json(o));
    s.seed = j.value("seed", std::uint64_t{0});
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("scenario: ") + e.what());
  }
}

/// FNV-1a over the canonical scenario JSON; identifies the world a tensor
/// was generated in.
inline std::string scenario_hash(const Scenario& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : to_json(s).dump()) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// ---- radio-map tensors ------------------------------------------------------

struct TensorMeta {
  std::string scenario_hash;
  std::uint64_t seed = 0;
};

inline fs::path sidecar_path(const fs::path& header) {
  fs::path p = header;
  p.replace_extension(".bin");
  return p;
}

inline std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  std::uint64_t r = 0;
  for (int b = 0; b < 8; ++b) r |= ((v >> (8 * b)) & 0xffu) << (8 * (7 - b));
  return r;
}

/// Writes `<name>.json` plus the raw `<name>.bin` sidecar.
inline void write_tensor(const fs::path& header, const Tensor3& x, const TensorMeta& meta) {
  const fs::path data = sidecar_path(header);
  const Dims& d = x.dims();
  json h{{"dims", {d.rows, d.cols, d.modes}},
         {"order", kTensorOrder},
         {"dtype", kTensorDtype},
         {"scenario_hash", meta.scenario_hash},
         {"seed", meta.seed},
         {"data", data.filename().string()}};
  write_text(header, h.dump(2) + "\n");
  auto out = open_out(data, std::ios::out | std::ios::binary);
  std::vector<std::uint64_t> raw(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) raw[n] = to_little_endian(std::bit_cast<std::uint64_t>(x[n]));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 8));
  if (!out) throw FormatError("failed writing " + data.string());
}

inline Tensor3 read_tensor(const fs::path& header, TensorMeta* meta = nullptr) {
  const json h = read_json(header);
  Dims d;
  try {
    const auto& dims = h.at("dims");
    if (!dims.is_array() || dims.size() != 3) throw FormatError("dims must have 3 entries");
    d = Dims{dims[0].get<std::size_t>(), dims[1].get<std::size_t>(), dims[2].get<std::size_t>()};
    if (h.at("order").get<std::string>() != kTensorOrder)
      throw FormatError("unsupported order '" + h.at("order").get<std::string>() + "'");
    if (h.at("dtype").get<std::string>() != kTensorDtype)
      throw FormatError("unsupported dtype '" + h.at("dtype").get<std::string>() + "'");
    if (meta != nullptr) {
      meta->scenario_hash = h.value("scenario_hash", std::string{});
      meta->seed = h.value("seed", std::uint64_t{0});
    }
  } catch (const json::exception& e) {
    throw FormatError(header.string() + ": " + e.what());
  }
  const fs::path data = header.parent_path() / h.value("data", sidecar_path(header).filename().string());
  auto in = open_in(data, std::ios::in | std::ios::binary);
  const std::size_t n = d.size();
  std::vector<std::uint64_t> raw(n);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 8));
  if (static_cast<std::size_t>(in.gcount()) != n * 8 || in.peek() != std::ifstream::traits_type::eof())
    throw FormatError(data.string() + ": expected " + std::to_string(n * 8) + " bytes for dims " + d.str());
  Tensor3 x(d);
  for (std::size_t k = 0; k < n; ++k) x[k] = std::bit_cast<double>(to_little_endian(raw[k]));
  return x;
}

// ---- codebook -------------------------------------------------------------

/// Plain-text codebook: header lines `key value`, then one line per mode
/// with R (real imag) pairs.
inline std::string codebook_text(const Codebook& cb) {
  std::ostringstream os;
  os << "fasmap-codebook 1\n"
     << "modes " << cb.modes << "\n"
     << "eadof " << cb.eadof << "\n"
     << "target_corr " << format_double(cb.target_corr) << "\n"
     << "taper_width " << format_double(cb.taper_width) << "\n"
     << "c_norm " << format_double(cb.c_norm) << "\n"
     << "weights\n";
  for (int m = 0; m < cb.modes; ++m) {
    for (int c = 0; c < cb.eadof; ++c)
      os << (c ? " " : "") << format_double(cb.weights(m, c).real()) << " "
         << format_double(cb.weights(m, c).imag());
    os << "\n";
  }
  return os.str();
}

inline Codebook parse_codebook(const std::string& text) {
  std::istringstream is(text);
  std::string key, value;
  is >> key >> value;
  if (key != "fasmap-codebook" || value != "1") throw FormatError("not a codebook file");
  Codebook cb;
  auto field = [&](const char* name) {
    is >> key >> value;
    if (!is || key != name) throw FormatError(std::string("codebook: expected ") + name);
    return value;
  };
  cb.modes = std::stoi(field("modes"));
  cb.eadof = std::stoi(field("eadof"));
  cb.target_corr = parse_double(field("target_corr"), "codebook");
  cb.taper_width = parse_double(field("taper_width"), "codebook");
  cb.c_norm = parse_double(field("c_norm"), "codebook");
  is >> key;
  if (key != "weights" || cb.modes < 1 || cb.eadof < 1) throw FormatError("codebook: bad weights header");
  cb.weights.resize(cb.modes, cb.eadof);
  for (int m = 0; m < cb.modes; ++m)
    for (int c = 0; c < cb.eadof; ++c) {
      std::string re, im;
      if (!(is >> re >> im)) throw FormatError("codebook: truncated weights");
      cb.weights(m, c) = {parse_double(re, "codebook"), parse_double(im, "codebook")};
    }
  return cb;
}

inline void write_codebook(const fs::path& path, const Codebook& cb) { write_text(path, codebook_text(cb)); }

inline Codebook read_codebook(const fs::path& path) {
  auto in = open_in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_codebook(os.str());
}

// ---- observations -----------------------------------------------------------

inline void write_omega_csv(const fs::path& path, const ObservationSet& obs) {
  std::ostringstream os;
  os << "i,j,m,value_dbm\n";
  for (const auto& ix : obs.omega)
    os << ix.i << "," << ix.j << "," << ix.m << "," << format_double(obs.y(ix.i, ix.j, ix.m)) << "\n";
  write_text(path, os.str());
}

inline ObservationSet read_omega_csv(const fs::path& path, const Dims& dims) {
  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line) || line != "i,j,m,value_dbm") throw FormatError(path.string() + ": bad header");
  std::vector<Index3> omega;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c, v;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, c, ',') ||
        !std::getline(ls, v))
      throw FormatError(path.string() + ": bad row '" + line + "'");
    omega.push_back({std::stoul(a), std::stoul(b), std::stoul(c)});
    values.push_back(parse_double(v, path.string()));
  }
  return make_observations(dims, std::move(omega), values);
}

// ---- solver report ------------------------------------------------------

inline json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const ConvergenceReport& r) {
  json history = json::array();
  for (const auto& h : r.history)
    history.push_back({{"iteration", h.iteration},
                       {"r", h.primal_residual},
                       {"s", h.dual_residual},
                       {"r_scaled", h.primal_scaled},
                       {"s_scaled", h.dual_scaled},
                       {"rho", h.rho},
                       {"objective", nullable(h.objective)},
                       {"elapsed_ms", h.elapsed_ms}});
  return {{"iterations", r.iterations},
          {"decision", to_string(r.decision)},
          {"final_objective", nullable(r.final_objective)},
          {"final_rho", r.final_rho},
          {"wall_ms", r.wall_ms},
          {"diagnostics", r.diagnostics},
          {"history", history}};
}

}  // namespace fasmap::io
