#include "scalerl/curve_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

#include "scalerl/error.hpp"

namespace scalerl {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& cell, std::size_t line, std::size_t col, const char* name) {
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (cell.empty() || ec != std::errc() || ptr != end) {
    std::ostringstream os;
    os << "line " << line << ", column " << col << " (" << name << "): cannot parse '" << cell << "' as a number";
    throw InputError(os.str());
  }
  return v;
}

}  // namespace

TrainingCurve read_training_curve(std::istream& in, const std::string& label) {
  TrainingCurve curve;
  curve.label = label;
  std::string raw;
  std::size_t line_no = 0;
  bool header_seen = false;
  bool has_step = false;
  std::vector<std::size_t> bad_reward_lines;

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto cells = split_commas(line);
    if (!header_seen) {
      if (cells.size() < 2 || cells[0] != "compute" || cells[1] != "reward" ||
          (cells.size() == 3 && cells[2] != "step") || cells.size() > 3) {
        throw InputError("line " + std::to_string(line_no) + ": expected header 'compute,reward[,step]'");
      }
      has_step = cells.size() == 3;
      header_seen = true;
      continue;
    }
    const std::size_t want = has_step ? 3 : 2;
    if (cells.size() != want) {
      std::ostringstream os;
      os << "line " << line_no << ": expected " << want << " columns, found " << cells.size();
      throw InputError(os.str());
    }
    CurvePoint p;
    p.compute = parse_number(cells[0], line_no, 1, "compute");
    p.reward = parse_number(cells[1], line_no, 2, "reward");
    if (has_step) p.step = static_cast<long>(parse_number(cells[2], line_no, 3, "step"));
    if (!(p.reward >= 0.0 && p.reward <= 1.0)) bad_reward_lines.push_back(line_no);
    if (!(p.compute >= 0.0)) {
      throw InputError("line " + std::to_string(line_no) + ", column 1 (compute): must be >= 0");
    }
    if (!curve.points.empty() && !(p.compute > curve.points.back().compute)) {
      throw InputError("line " + std::to_string(line_no) + ", column 1 (compute): not strictly increasing");
    }
    curve.points.push_back(p);
  }
  if (!bad_reward_lines.empty()) {
    std::ostringstream os;
    os << "reward outside [0, 1] on line(s)";
    for (auto l : bad_reward_lines) os << ' ' << l;
    throw InputError(os.str());
  }
  return curve;
}

TrainingCurve read_training_curve(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return read_training_curve(in, path.stem().string());
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, ptr) : std::to_string(v);
}

void write_training_curve(std::ostream& out, const TrainingCurve& curve) {
  const bool has_step = !curve.points.empty() && curve.points.front().step.has_value();
  if (!curve.label.empty()) out << "# " << curve.label << '\n';
  out << (has_step ? "compute,reward,step\n" : "compute,reward\n");
  for (const auto& p : curve.points) {
    out << format_double(p.compute) << ',' << format_double(p.reward);
    if (has_step) out << ',' << p.step.value_or(0);
    out << '\n';
  }
}

void write_training_curve(const std::filesystem::path& path, const TrainingCurve& curve) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  write_training_curve(out, curve);
}

nlohmann::json to_json(const FitResult& fit) {
  nlohmann::json j;
  if (fit.is_sigmoid()) {
    const auto& c = fit.sigmoid();
    j["model"] = "sigmoid";
    j["R0"] = c.r0;
    j["A"] = c.a;
    j["B"] = c.b;
    j["Cmid"] = c.cmid;
    j["D"] = nullptr;
  } else {
    const auto& c = fit.power_law();
    j["model"] = "powerlaw";
    j["R0"] = nullptr;
    j["A"] = c.a;
    j["B"] = c.b;
    j["Cmid"] = nullptr;
    j["D"] = c.d;
  }
  j["ssr"] = fit.ssr;
  j["window"] = {fit.window.first, fit.window.second};
  j["n_points"] = fit.n_points;
  j["grid_best"] = fit.grid_best;
  return j;
}

FitResult fit_result_from_json(const nlohmann::json& j) {
  try {
    FitResult fit;
    const auto model = j.at("model").get<std::string>();
    if (model == "sigmoid") {
      fit.curve = SigmoidCurve{j.at("R0").get<double>(), j.at("A").get<double>(), j.at("B").get<double>(),
                               j.at("Cmid").get<double>()};
    } else if (model == "powerlaw") {
      fit.curve = PowerLawCurve{j.at("A").get<double>(), j.at("B").get<double>(), j.at("D").get<double>(),
                                j.at("window").at(0).get<double>()};
    } else {
      throw InputError("unknown model '" + model + "'");
    }
    fit.ssr = j.at("ssr").get<double>();
    fit.window = {j.at("window").at(0).get<double>(), j.at("window").at(1).get<double>()};
    fit.n_points = j.at("n_points").get<std::size_t>();
    fit.grid_best = j.value("grid_best", false);
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed fit JSON: ") + e.what());
  }
}

}  // namespace scalerl
