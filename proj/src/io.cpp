#include "pifm/io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pifm {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_text(ss.str(), path);
}

Config Config::from_text(const std::string& text, const std::string& origin) {
  Config cfg;
  std::istringstream f(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw IoError(origin + ":" + std::to_string(lineno) + ": bad section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError(origin + ":" + std::to_string(lineno) +
                    ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw IoError(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.set(section.empty() ? key : section + "." + key, value);
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  values_[key] = value;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ParamError("override must be section.key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::merge(const Config& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

bool Config::has(const std::string& key) const {
  return values_.count(key) != 0;
}

std::string Config::get_string(const std::string& key,
                               const std::string& dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  return it == values_.end() ? dflt : it->second;
}

double Config::get_double(const std::string& key, double dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParamError("config key " + key + ": not a number: " + it->second);
  }
}

std::size_t Config::get_size(const std::string& key, std::size_t dflt) const {
  const double v = get_double(key, static_cast<double>(dflt));
  if (v < 0 || v != std::floor(v))
    throw ParamError("config key " + key + ": not a nonnegative integer");
  return static_cast<std::size_t>(v);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t dflt) const {
  consumed_.insert(key);
  auto it = values_.find(key);
  if (it == values_.end()) return dflt;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ParamError("config key " + key + ": not an integer: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool dflt) const {
  const std::string s = get_string(key, dflt ? "1" : "0");
  if (s == "1" || s == "true" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "no") return false;
  throw ParamError("config key " + key + ": not a boolean: " + s);
}

void Config::check_all_consumed() const {
  std::vector<std::string> unknown;
  for (const auto& [k, v] : values_)
    if (!consumed_.count(k)) unknown.push_back(k);
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ParamError(msg);
  }
}

namespace {

std::vector<double> parse_args(const std::string& inside, const std::string& ctx) {
  std::vector<double> out;
  std::istringstream ss(inside);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell = trim(cell);
    if (cell.empty()) throw ParamError("bad shape argument in " + ctx);
    out.push_back(std::stod(cell));
  }
  return out;
}

}  // namespace

ShapeSpec parse_shape(const std::string& text) {
  const std::string s = trim(text);
  const auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')')
    throw ParamError("bad shape spec: " + text);
  const std::string kind = trim(s.substr(0, open));
  const auto args = parse_args(s.substr(open + 1, s.size() - open - 2), text);

  if (kind == "disc") {
    if (args.size() != 3) throw ParamError("disc(cx,cy,r): " + text);
    return ShapeSpec::disc({args[0], args[1]}, args[2]);
  }
  if (kind == "square") {
    if (args.size() != 3) throw ParamError("square(cx,cy,h): " + text);
    return ShapeSpec::square({args[0], args[1]}, args[2]);
  }
  if (kind == "gauss") {
    if (args.size() == 3)
      return ShapeSpec::gaussian_iso({args[0], args[1]}, args[2]);
    if (args.size() == 5) {
      Matrix cov(2, 2);
      cov(0, 0) = args[2];
      cov(0, 1) = cov(1, 0) = args[3];
      cov(1, 1) = args[4];
      return ShapeSpec::gaussian({args[0], args[1]}, cov);
    }
    throw ParamError("gauss(mx,my,var) or gauss(mx,my,sxx,sxy,syy): " + text);
  }
  if (kind == "spiral") {
    if (args.size() != 5)
      throw ParamError("spiral(cx,cy,scale,turns,noise): " + text);
    return ShapeSpec::spiral({args[0], args[1]}, args[2], args[3], args[4]);
  }
  if (kind == "moons") {
    if (args.size() != 4) throw ParamError("moons(cx,cy,scale,noise): " + text);
    return ShapeSpec::moons({args[0], args[1]}, args[2], args[3]);
  }
  throw ParamError("unknown shape kind: " + kind);
}

std::string shape_to_string(const ShapeSpec& spec) {
  std::ostringstream os;
  switch (spec.kind) {
    case ShapeKind::disc:
      os << "disc(" << format_double(spec.center[0]) << ","
         << format_double(spec.center[1]) << "," << format_double(spec.radius)
         << ")";
      break;
    case ShapeKind::square:
      os << "square(" << format_double(spec.center[0]) << ","
         << format_double(spec.center[1]) << "," << format_double(spec.radius)
         << ")";
      break;
    case ShapeKind::gaussian:
      os << "gauss(" << format_double(spec.center[0]) << ","
         << format_double(spec.center[1]) << "," << format_double(spec.cov(0, 0))
         << "," << format_double(spec.cov(0, 1)) << ","
         << format_double(spec.cov(1, 1)) << ")";
      break;
    case ShapeKind::spiral:
      os << "spiral(" << format_double(spec.center[0]) << ","
         << format_double(spec.center[1]) << "," << format_double(spec.radius)
         << "," << format_double(spec.turns) << "," << format_double(spec.noise)
         << ")";
      break;
    case ShapeKind::moons:
      os << "moons(" << format_double(spec.center[0]) << ","
         << format_double(spec.center[1]) << "," << format_double(spec.radius)
         << "," << format_double(spec.noise) << ")";
      break;
    case ShapeKind::affine_of:
      os << "affine-of(" << shape_to_string(*spec.base) << ")";
      break;
  }
  return os.str();
}

Vec parse_vec(const std::string& text) {
  return parse_args(text, "vector '" + text + "'");
}

void write_scatter_svg(const std::string& path,
                       const std::vector<SvgLayer>& layers,
                       const std::string& title) {
  double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
  for (const auto& layer : layers) {
    if (!layer.cloud) continue;
    for (std::size_t i = 0; i < layer.cloud->size(); ++i) {
      auto p = layer.cloud->point(i);
      lo_x = std::min(lo_x, p[0]);
      hi_x = std::max(hi_x, p[0]);
      lo_y = std::min(lo_y, p[1]);
      hi_y = std::max(hi_y, p[1]);
    }
  }
  if (lo_x > hi_x) {
    lo_x = lo_y = -1.0;
    hi_x = hi_y = 1.0;
  }
  const double pad_x = 0.05 * std::max(hi_x - lo_x, 1e-9);
  const double pad_y = 0.05 * std::max(hi_y - lo_y, 1e-9);
  lo_x -= pad_x;
  hi_x += pad_x;
  lo_y -= pad_y;
  hi_y += pad_y;
  const double w = 640.0, h = 640.0, margin = 40.0;
  const double sx = (w - 2 * margin) / (hi_x - lo_x);
  const double sy = (h - 2 * margin) / (hi_y - lo_y);
  const double scale = std::min(sx, sy);
  auto map_x = [&](double x) { return margin + (x - lo_x) * scale; };
  auto map_y = [&](double y) { return h - margin - (y - lo_y) * scale; };

  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
    << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << margin << "\" y=\"24\" font-size=\"16\" "
       "font-family=\"sans-serif\">"
    << title << "</text>\n";
  double legend_y = 44.0;
  for (const auto& layer : layers) {
    f << "<g id=\"layer-" << layer.label << "\" fill=\"" << layer.color
      << "\" fill-opacity=\"0.6\">\n";
    if (layer.cloud)
      for (std::size_t i = 0; i < layer.cloud->size(); ++i) {
        auto p = layer.cloud->point(i);
        f << "<circle cx=\"" << map_x(p[0]) << "\" cy=\"" << map_y(p[1])
          << "\" r=\"" << layer.radius << "\"/>\n";
      }
    f << "</g>\n";
    f << "<circle cx=\"" << w - 170 << "\" cy=\"" << legend_y - 4 << "\" r=\"5\" fill=\""
      << layer.color << "\"/>\n";
    f << "<text x=\"" << w - 158 << "\" y=\"" << legend_y
      << "\" font-size=\"13\" font-family=\"sans-serif\">" << layer.label
      << "</text>\n";
    legend_y += 20.0;
  }
  f << "</svg>\n";
  if (!f) throw IoError("write failed: " + path);
}

namespace {

// Compact SHA-256 (FIPS 180-4).
struct Sha256 {
  std::array<std::uint32_t, 8> h = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u,
                                    0xa54ff53au, 0x510e527fu, 0x9b05688cu,
                                    0x1f83d9abu, 0x5be0cd19u};
  std::array<unsigned char, 64> buf{};
  std::size_t buf_len = 0;
  std::uint64_t total = 0;

  static std::uint32_t rotr(std::uint32_t x, int n) {
    return (x >> n) | (x << (32 - n));
  }

  void block(const unsigned char* p) {
    static constexpr std::uint32_t k[64] = {
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
        0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
        0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
        0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
        0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
        0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
        0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
        0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
        0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 =
          rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 =
          rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    auto [a, b, c, d, e, ff, g, hh] = h;
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & ff) ^ (~e & g);
      const std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      hh = g;
      g = ff;
      ff = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += ff;
    h[6] += g;
    h[7] += hh;
  }

  void update(const unsigned char* p, std::size_t len) {
    total += len;
    while (len > 0) {
      const std::size_t take = std::min(len, buf.size() - buf_len);
      std::memcpy(buf.data() + buf_len, p, take);
      buf_len += take;
      p += take;
      len -= take;
      if (buf_len == buf.size()) {
        block(buf.data());
        buf_len = 0;
      }
    }
  }

  std::string hex() {
    const std::uint64_t bits = total * 8;
    unsigned char pad = 0x80;
    update(&pad, 1);
    unsigned char zero = 0;
    while (buf_len != 56) update(&zero, 1);
    unsigned char len_be[8];
    for (int i = 0; i < 8; ++i)
      len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(len_be, 8);
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint32_t v : h)
      for (int i = 28; i >= 0; i -= 4) out.push_back(digits[(v >> i) & 0xF]);
    return out;
  }
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 s;
  s.update(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  return s.hex();
}

std::string sha256_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  Sha256 s;
  std::array<char, 65536> chunk;
  while (f) {
    f.read(chunk.data(), chunk.size());
    s.update(reinterpret_cast<const unsigned char*>(chunk.data()),
             static_cast<std::size_t>(f.gcount()));
  }
  return s.hex();
}

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for write: " + path);
  f << j.dump(2) << "\n";
  if (!f) throw IoError("write failed: " + path);
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  nlohmann::json j;
  f >> j;
  return j;
}

nlohmann::json strip_wall_fields(nlohmann::json j) {
  if (j.is_object()) {
    nlohmann::json out = nlohmann::json::object();
    for (auto& [k, v] : j.items()) {
      if (k.rfind("wall", 0) == 0) continue;
      out[k] = strip_wall_fields(v);
    }
    return out;
  }
  if (j.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (auto& v : j) out.push_back(strip_wall_fields(v));
    return out;
  }
  return j;
}

std::string canonical_metrics(const nlohmann::json& j) {
  return strip_wall_fields(j).dump(2);
}

void write_manifest(const std::string& dir, const nlohmann::json& config_echo,
                    std::uint64_t seed, const nlohmann::json& phases,
                    const std::vector<std::string>& files) {
  nlohmann::json m;
  m["version"] = "pifm 0.1.0";
  m["seed"] = seed;
  m["config"] = config_echo;
  m["wall_phases_ms"] = phases;
  auto inv = nlohmann::json::array();
  for (const auto& rel : files) {
    const std::string full = dir + "/" + rel;
    std::ifstream f(full, std::ios::binary | std::ios::ate);
    if (!f) throw IoError("manifest: missing artifact " + full);
    nlohmann::json e;
    e["path"] = rel;
    e["bytes"] = static_cast<std::uint64_t>(f.tellg());
    e["sha256"] = sha256_file(full);
    inv.push_back(e);
  }
  m["outputs"] = inv;
  write_json(dir + "/manifest.json", m);
}

}  // namespace pifm
