#include "varmech/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace varmech::io {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 14695981039346656037ull;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a64_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot hash missing file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string s = ss.str();
  return fnv1a64(s.data(), s.size());
}

// ---- config -----------------------------------------------------------------------

prob::ProblemConfig default_problem_config(prob::ProblemKind kind) {
  prob::ProblemConfig cfg;
  cfg.kind = kind;
  if (kind == prob::ProblemKind::plate) {
    cfg.disc.qp = 1000;
    cfg.disc.layout = prob::DiscretizationSpec::Layout::random_uniform_2d;
  } else {
    cfg.disc.qp = 11;
    cfg.disc.layout = prob::DiscretizationSpec::Layout::uniform_1d;
  }
  return cfg;
}

train::Schedule default_schedule(prob::ProblemKind kind, uint64_t seed) {
  train::Schedule s;
  s.seed = seed;
  if (kind == prob::ProblemKind::plate) {
    s.max_loops = 500;
    s.stop_tol = 1e-4;
  } else {
    // smaller step keeps switch-cycle parameter diffusion below the level
    // that saturates the first hidden layer on long runs
    s.alpha = 5e-4;
    s.max_loops = 20000;
    s.stop_tol = 1e-5;
  }
  return s;
}

nlohmann::json problem_config_to_json(const prob::ProblemConfig& cfg) {
  nlohmann::json j;
  j["problem"] = prob::to_string(cfg.kind);
  j["geometry"] = {{"span", cfg.geometry.span}, {"g", cfg.geometry.g},
                   {"rho_g", cfg.geometry.rho_g}};
  j["material"] = {{"e_mod_mpa", cfg.material.e_mod_mpa}, {"mu", cfg.material.mu},
                   {"t_mm", cfg.material.t_mm}};
  j["discretization"] = {
      {"qp", cfg.disc.qp},
      {"layout",
       cfg.disc.layout == prob::DiscretizationSpec::Layout::uniform_1d ? "uniform-1d"
                                                                       : "random-uniform-2d"},
      {"seed", cfg.disc.seed},
      {"resample_per_loop", cfg.disc.resample_per_loop}};
  j["penalties"] = {{"lambda_bc", cfg.weights.lambda_bc},
                    {"lambda_len", cfg.weights.lambda_len},
                    {"lambda_desc", cfg.weights.lambda_desc}};
  return j;
}

prob::ProblemConfig problem_config_from_json(const nlohmann::json& j) {
  if (!j.contains("problem")) throw ConfigError("config is missing the 'problem' field");
  prob::ProblemKind kind;
  try {
    kind = prob::problem_kind_from_string(j.at("problem").get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config field 'problem': ") + e.what());
  }
  prob::ProblemConfig cfg = default_problem_config(kind);

  auto get_num = [&](const nlohmann::json& obj, const char* section, const char* field,
                     double& out) {
    if (!obj.contains(field)) return;
    if (!obj.at(field).is_number())
      throw ConfigError(std::string("config field '") + section + "." + field +
                        "' must be a number");
    out = obj.at(field).get<double>();
  };

  if (j.contains("geometry")) {
    const auto& g = j.at("geometry");
    get_num(g, "geometry", "span", cfg.geometry.span);
    get_num(g, "geometry", "g", cfg.geometry.g);
    get_num(g, "geometry", "rho_g", cfg.geometry.rho_g);
  }
  if (j.contains("material")) {
    const auto& m = j.at("material");
    get_num(m, "material", "e_mod_mpa", cfg.material.e_mod_mpa);
    get_num(m, "material", "mu", cfg.material.mu);
    get_num(m, "material", "t_mm", cfg.material.t_mm);
  }
  if (j.contains("discretization")) {
    const auto& d = j.at("discretization");
    if (d.contains("qp")) cfg.disc.qp = d.at("qp").get<int>();
    if (d.contains("seed")) cfg.disc.seed = d.at("seed").get<uint64_t>();
    if (d.contains("resample_per_loop"))
      cfg.disc.resample_per_loop = d.at("resample_per_loop").get<bool>();
    if (d.contains("layout")) {
      const std::string lay = d.at("layout").get<std::string>();
      if (lay == "uniform-1d")
        cfg.disc.layout = prob::DiscretizationSpec::Layout::uniform_1d;
      else if (lay == "random-uniform-2d")
        cfg.disc.layout = prob::DiscretizationSpec::Layout::random_uniform_2d;
      else
        throw ConfigError("config field 'discretization.layout': unknown layout " + lay);
    }
    if (cfg.disc.qp < 3) throw ConfigError("config field 'discretization.qp' must be >= 3");
  }
  if (j.contains("penalties")) {
    const auto& p = j.at("penalties");
    get_num(p, "penalties", "lambda_bc", cfg.weights.lambda_bc);
    get_num(p, "penalties", "lambda_len", cfg.weights.lambda_len);
    get_num(p, "penalties", "lambda_desc", cfg.weights.lambda_desc);
    if (cfg.weights.lambda_bc <= 0 || cfg.weights.lambda_len <= 0)
      throw ConfigError("config penalties must be positive");
  }
  return cfg;
}

prob::ProblemConfig load_problem_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open problem file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    // recover the line number from the byte offset for a precise message
    std::ifstream g(path);
    std::string text((std::istreambuf_iterator<char>(g)), std::istreambuf_iterator<char>());
    size_t line = 1;
    for (size_t i = 0; i < std::min(e.byte, text.size()); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError(path + ":" + std::to_string(line) + ": " + e.what());
  }
  return problem_config_from_json(j);
}

// ---- artifact writers ----------------------------------------------------------------

void write_trace_csv(const train::LossTrace& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << "epoch,loop,sample_label,loss\n";
  for (const auto& e : trace.entries)
    f << e.epoch << ',' << e.loop << ',' << trace.sample_labels[e.sample_index] << ','
      << format_double(e.loss) << '\n';
}

void write_sweep_csv(const analysis::GeneralizationReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << "feature_value,r2\n";
  for (const auto& p : rep.points)
    f << format_double(p.feature) << ',' << (p.feasible ? format_double(p.r2) : "nan") << '\n';
}

void write_sweep_summary(const analysis::GeneralizationReport& rep, const std::string& path) {
  nlohmann::json j;
  j["feature"] = rep.feature_name;
  j["threshold"] = rep.threshold;
  j["training_values"] = rep.training_values;
  nlohmann::json iv = nlohmann::json::array();
  for (const auto& i : rep.intervals) iv.push_back({{"lo", i.lo}, {"hi", i.hi}});
  j["intervals"] = iv;
  j["total_width"] = analysis::total_width(rep.intervals);
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << j.dump(1);
}

void write_la_csv(const analysis::LearningActivityTable& table,
                  std::span<const std::string> feature_names,
                  std::span<const std::string> sample_dependent, const std::string& path) {
  const analysis::PathRanking all =
      analysis::rank_paths(table, static_cast<int>(table.size()), feature_names,
                           sample_dependent);
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path);
  f << "i0,i1,i2,i3,origin,la_value\n";
  for (const auto& p : all.paths)
    f << p.i0 << ',' << p.i1 << ',' << p.i2 << ',' << p.i3 << ',' << p.origin_feature << ','
      << format_double(p.la) << '\n';
}

// ---- svg plots -------------------------------------------------------------------------

namespace {

struct SvgCanvas {
  std::ostringstream out;
  double w = 640, h = 400, margin = 45;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return margin + (x - x0) / (x1 - x0) * (w - 2 * margin); }
  double py(double y) const { return h - margin - (y - y0) / (y1 - y0) * (h - 2 * margin); }

  void open() {
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h
        << "' viewBox='0 0 " << w << " " << h << "'>\n";
    out << "<rect width='100%' height='100%' fill='white'/>\n";
  }
  void axes() {
    out << "<rect x='" << margin << "' y='" << margin << "' width='" << w - 2 * margin
        << "' height='" << h - 2 * margin << "' fill='none' stroke='black'/>\n";
  }
  void polyline(const std::vector<double>& xs, const std::vector<double>& ys,
                const char* color) {
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1' points='";
    for (size_t i = 0; i < xs.size(); ++i) out << px(xs[i]) << ',' << py(ys[i]) << ' ';
    out << "'/>\n";
  }
  void close(const std::string& path) {
    out << "</svg>\n";
    std::ofstream f(path);
    f << out.str();
  }
};

} // namespace

void write_trace_svg(const train::LossTrace& trace, const std::string& path) {
  if (trace.entries.empty()) return;
  SvgCanvas c;
  std::vector<double> xs, ys;
  double lo = 1e300, hi = -1e300;
  for (const auto& e : trace.entries) {
    const double v = std::log10(std::max(std::abs(e.loss), 1e-300));
    xs.push_back(static_cast<double>(e.epoch));
    ys.push_back(v);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  c.x0 = 0;
  c.x1 = xs.back();
  c.y0 = lo - 0.1;
  c.y1 = hi + 0.1;
  c.open();
  c.axes();
  c.polyline(xs, ys, "steelblue");
  c.close(path);
}

void write_sweep_svg(const analysis::GeneralizationReport& rep, const std::string& path) {
  if (rep.points.empty()) return;
  SvgCanvas c;
  c.x0 = rep.points.front().feature;
  c.x1 = rep.points.back().feature;
  c.y0 = -0.05;
  c.y1 = 1.05;
  c.open();
  for (const auto& iv : rep.intervals) {
    c.out << "<rect x='" << c.px(iv.lo) << "' y='" << c.py(1.05) << "' width='"
          << std::max(1.0, c.px(iv.hi) - c.px(iv.lo)) << "' height='" << c.py(-0.05) - c.py(1.05)
          << "' fill='gold' opacity='0.25'/>\n";
  }
  c.axes();
  std::vector<double> xs, ys;
  for (const auto& p : rep.points)
    if (p.feasible) {
      xs.push_back(p.feature);
      ys.push_back(std::clamp(p.r2, -0.05, 1.05));
    }
  c.polyline(xs, ys, "steelblue");
  c.polyline({c.x0, c.x1}, {rep.threshold, rep.threshold}, "crimson");
  c.close(path);
}

void write_manifest(const ReportBundle& bundle, const std::string& command_line,
                    uint64_t config_hash, uint64_t seed) {
  nlohmann::json j;
  j["tool_version"] = kToolVersion;
  j["command"] = command_line;
  j["seed"] = seed;
  char hex[20];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(config_hash));
  j["config_hash"] = hex;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& rel : bundle.files) {
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64_file((bundle.dir / rel).string())));
    files.push_back({{"path", rel}, {"fnv1a64", hex}});
  }
  j["files"] = files;
  std::ofstream f(bundle.dir / "manifest.json");
  if (!f) throw ConfigError("cannot write manifest");
  f << j.dump(1);
}

} // namespace varmech::io
