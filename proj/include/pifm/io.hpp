#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "pifm/geometry.hpp"

namespace pifm {

/// Flat "[section] / key = value" config. Typed getters mark keys as
/// consumed; check_all_consumed() turns leftovers (typos, unknown options)
/// into an error listing them.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_text(const std::string& text, const std::string& origin);

  void set(const std::string& key, const std::string& value);
  void apply_override(const std::string& assignment);  // "section.key=value"
  void merge(const Config& other);                     // other wins

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key, double dflt) const;
  std::size_t get_size(const std::string& key, std::size_t dflt) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;

  void check_all_consumed() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

/// 2-D shape DSL used by config files and CLI flags:
///   disc(cx,cy,r) | square(cx,cy,h) | gauss(mx,my,var) |
///   gauss(mx,my,sxx,sxy,syy) | spiral(cx,cy,scale,turns,noise) |
///   moons(cx,cy,scale,noise)
ShapeSpec parse_shape(const std::string& text);
std::string shape_to_string(const ShapeSpec& spec);

Vec parse_vec(const std::string& text);  // comma-separated reals

struct SvgLayer {
  const PointCloud* cloud = nullptr;
  std::string color = "#1f77b4";
  std::string label;
  double radius = 2.0;
};

/// Hand-rolled scatter plot; one <g id="layer-..."> group per cloud.
void write_scatter_svg(const std::string& path,
                       const std::vector<SvgLayer>& layers,
                       const std::string& title);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// Wall-clock fields (any key starting with "wall") are machine-dependent;
/// reproducibility comparisons run on the stripped document.
nlohmann::json strip_wall_fields(nlohmann::json j);
std::string canonical_metrics(const nlohmann::json& j);

/// Run manifest: config echo, seed, version, per-phase wall times, and an
/// inventory (path, bytes, sha256) of every artifact the run wrote.
void write_manifest(const std::string& dir, const nlohmann::json& config_echo,
                    std::uint64_t seed, const nlohmann::json& phases,
                    const std::vector<std::string>& files);

}  // namespace pifm
