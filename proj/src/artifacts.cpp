#include "cfield/artifacts.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "cfield/mesh_io.hpp"

namespace cfield {

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw std::runtime_error("write failed for " + path);
}

void check_cell(const std::string& cell) {
  if (cell.find_first_of(",\n\r") != std::string::npos)
    throw std::invalid_argument("csv: cell contains a separator: " + cell);
}

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Largest 1/2/5-decade step that produces at most `target`+2 ticks.
double nice_step(double span, int target) {
  const double raw = span / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double norm = raw / mag;
  double mult = 10.0;
  if (norm < 1.5) {
    mult = 1.0;
  } else if (norm < 3.0) {
    mult = 2.0;
  } else if (norm < 7.0) {
    mult = 5.0;
  }
  return mult * mag;
}

std::string svg_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

nlohmann::json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }

Vec3 vec3_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::string format_csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_csv_number(const std::string& cell) {
  const char* begin = cell.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || end != begin + cell.size())
    throw std::invalid_argument("csv: not a number: '" + cell + "'");
  return v;
}

std::string to_csv(const CsvTable& table) {
  if (table.columns.empty()) throw std::invalid_argument("csv: table without columns");
  std::string out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) {
    check_cell(table.columns[c]);
    if (c) out += ',';
    out += table.columns[c];
  }
  out += '\n';
  for (const std::vector<std::string>& row : table.rows) {
    if (row.size() != table.columns.size())
      throw std::invalid_argument("csv: row width does not match the header");
    for (std::size_t c = 0; c < row.size(); ++c) {
      check_cell(row[c]);
      if (c) out += ',';
      out += row[c];
    }
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

}  // namespace

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (table.columns.empty()) {
      table.columns = std::move(cells);
    } else {
      if (cells.size() != table.columns.size())
        throw ParseError("<csv>", line_no, "row width does not match the header");
      table.rows.push_back(std::move(cells));
    }
  }
  if (table.columns.empty()) throw ParseError("<csv>", 0, "empty table");
  return table;
}

void save_csv(const CsvTable& table, const std::string& path) {
  write_file(path, to_csv(table));
}

CsvTable load_csv(const std::string& path) {
  try {
    return parse_csv(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path, e.line_number, e.what());
  }
}

CsvTable matrix_csv(const std::vector<std::string>& columns, const MatX& values) {
  if (static_cast<Eigen::Index>(columns.size()) != values.cols())
    throw std::invalid_argument("csv: column count does not match the matrix");
  CsvTable table;
  table.columns = columns;
  table.rows.reserve(static_cast<std::size_t>(values.rows()));
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    std::vector<std::string> row;
    row.reserve(columns.size());
    for (Eigen::Index j = 0; j < values.cols(); ++j) row.push_back(format_csv_number(values(i, j)));
    table.rows.push_back(std::move(row));
  }
  return table;
}

MatX csv_matrix(const CsvTable& table) {
  MatX m(static_cast<Eigen::Index>(table.rows.size()),
         static_cast<Eigen::Index>(table.columns.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (std::size_t j = 0; j < table.columns.size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_csv_number(table.rows[i][j]);
  return m;
}

std::string render_line_chart(const LineChart& chart) {
  if (chart.series.empty()) throw std::invalid_argument("chart: no series");
  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
  double ylo = xlo, yhi = -xlo;
  for (const ChartSeries& s : chart.series) {
    if (s.x.size() != s.y.size() || s.x.size() == 0)
      throw std::invalid_argument("chart: series '" + s.label + "' is empty or ragged");
    if (!s.x.allFinite() || !s.y.allFinite())
      throw std::invalid_argument("chart: series '" + s.label + "' has non-finite values");
    xlo = std::min(xlo, s.x.minCoeff());
    xhi = std::max(xhi, s.x.maxCoeff());
    ylo = std::min(ylo, s.y.minCoeff());
    yhi = std::max(yhi, s.y.maxCoeff());
  }
  if (xhi <= xlo) {
    xlo -= 1.0;
    xhi += 1.0;
  }
  if (yhi <= ylo) {
    ylo -= 1.0;
    yhi += 1.0;
  }
  const double xpad = 0.04 * (xhi - xlo), ypad = 0.05 * (yhi - ylo);
  xlo -= xpad;
  xhi += xpad;
  ylo -= ypad;
  yhi += ypad;

  const double ml = 70, mr = 20, mt = 40, mb = 52;
  const double pw = chart.width - ml - mr;
  const double ph = chart.height - mt - mb;
  auto px = [&](double x) { return ml + (x - xlo) / (xhi - xlo) * pw; };
  auto py = [&](double y) { return chart.height - mb - (y - ylo) / (yhi - ylo) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(chart.width) +
         "\" height=\"" + std::to_string(chart.height) + "\" viewBox=\"0 0 " +
         std::to_string(chart.width) + " " + std::to_string(chart.height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg += "<text x=\"" + svg_num(chart.width / 2.0) +
         "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         xml_escape(chart.title) + "</text>\n";

  // Grid and ticks.
  const double xstep = nice_step(xhi - xlo, 5);
  const double ystep = nice_step(yhi - ylo, 5);
  for (double t = std::ceil(xlo / xstep) * xstep; t <= xhi + 1e-12 * xstep; t += xstep) {
    svg += "<line x1=\"" + svg_num(px(t)) + "\" y1=\"" + svg_num(mt) + "\" x2=\"" +
           svg_num(px(t)) + "\" y2=\"" + svg_num(chart.height - mb) +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + svg_num(px(t)) + "\" y=\"" + svg_num(chart.height - mb + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
           svg_num(std::abs(t) < 1e-12 * xstep ? 0.0 : t) + "</text>\n";
  }
  for (double t = std::ceil(ylo / ystep) * ystep; t <= yhi + 1e-12 * ystep; t += ystep) {
    svg += "<line x1=\"" + svg_num(ml) + "\" y1=\"" + svg_num(py(t)) + "\" x2=\"" +
           svg_num(chart.width - mr) + "\" y2=\"" + svg_num(py(t)) +
           "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + svg_num(ml - 8) + "\" y=\"" + svg_num(py(t) + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">" +
           svg_num(std::abs(t) < 1e-12 * ystep ? 0.0 : t) + "</text>\n";
  }
  svg += "<rect x=\"" + svg_num(ml) + "\" y=\"" + svg_num(mt) + "\" width=\"" + svg_num(pw) +
         "\" height=\"" + svg_num(ph) + "\" fill=\"none\" stroke=\"#444444\"/>\n";

  // Axis labels.
  svg += "<text x=\"" + svg_num(ml + pw / 2.0) + "\" y=\"" + svg_num(chart.height - 14) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" +
         xml_escape(chart.x_label) + "</text>\n";
  svg += "<text x=\"18\" y=\"" + svg_num(mt + ph / 2.0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
         "transform=\"rotate(-90 18 " +
         svg_num(mt + ph / 2.0) + ")\">" + xml_escape(chart.y_label) + "</text>\n";

  // Series.
  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const ChartSeries& s = chart.series[si];
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    svg += "<polyline fill=\"none\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"1.6\" points=\"";
    for (Eigen::Index i = 0; i < s.x.size(); ++i) {
      if (i) svg += ' ';
      svg += svg_num(px(s.x[i]));
      svg += ',';
      svg += svg_num(py(s.y[i]));
    }
    svg += "\"/>\n";
  }

  // Legend, top-right inside the plot.
  for (std::size_t si = 0; si < chart.series.size(); ++si) {
    const char* color = kPalette[si % (sizeof(kPalette) / sizeof(kPalette[0]))];
    const double y = mt + 16 + 16.0 * static_cast<double>(si);
    const double x = chart.width - mr - 150;
    svg += "<line x1=\"" + svg_num(x) + "\" y1=\"" + svg_num(y - 4) + "\" x2=\"" +
           svg_num(x + 22) + "\" y2=\"" + svg_num(y - 4) + "\" stroke=\"";
    svg += color;
    svg += "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + svg_num(x + 28) + "\" y=\"" + svg_num(y) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" +
           xml_escape(chart.series[si].label) + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void save_line_chart(const LineChart& chart, const std::string& path) {
  write_file(path, render_line_chart(chart));
}

void save_momenta(const MomentaArtifact& artifact, const std::string& csv_path) {
  std::string csv;
  for (Eigen::Index i = 0; i < artifact.momenta.rows(); ++i) {
    csv += format_csv_number(artifact.momenta(i, 0));
    csv += ',';
    csv += format_csv_number(artifact.momenta(i, 1));
    csv += ',';
    csv += format_csv_number(artifact.momenta(i, 2));
    csv += '\n';
  }
  write_file(csv_path, csv);

  nlohmann::json j;
  j["lambda_v"] = artifact.lambda_v;
  j["lambda_w"] = artifact.lambda_w;
  j["grid"] = {{"spacing", artifact.grid_spacing},
               {"lo", vec3_json(artifact.grid_lo)},
               {"hi", vec3_json(artifact.grid_hi)}};
  j["cost_history"] = artifact.cost_history;
  write_file(csv_path + ".json", j.dump(2) + "\n");
}

MomentaArtifact load_momenta(const std::string& csv_path) {
  MomentaArtifact artifact;
  const std::string text = read_file(csv_path);
  std::vector<Vec3> rows;
  std::size_t pos = 0;
  int line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = eol + 1;
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != 3) throw ParseError(csv_path, line_no, "expected 3 columns");
    try {
      rows.emplace_back(parse_csv_number(cells[0]), parse_csv_number(cells[1]),
                        parse_csv_number(cells[2]));
    } catch (const std::invalid_argument& e) {
      throw ParseError(csv_path, line_no, e.what());
    }
  }
  artifact.momenta.resize(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i)
    artifact.momenta.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(csv_path + ".json"));
    artifact.lambda_v = j.at("lambda_v").get<double>();
    artifact.lambda_w = j.at("lambda_w").get<double>();
    artifact.grid_spacing = j.at("grid").at("spacing").get<double>();
    artifact.grid_lo = vec3_from_json(j.at("grid").at("lo"));
    artifact.grid_hi = vec3_from_json(j.at("grid").at("hi"));
    artifact.cost_history = j.at("cost_history").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("momenta sidecar " + csv_path + ".json: " + e.what());
  }
  return artifact;
}

ControlGrid momenta_grid(const MomentaArtifact& artifact) {
  BoundingBox box;
  box.lo = artifact.grid_lo;
  box.hi = artifact.grid_hi;
  const ControlGrid grid = make_control_grid(box, artifact.grid_spacing);
  if (grid.points.rows() != artifact.momenta.rows())
    throw std::runtime_error("momenta sidecar: rebuilt lattice has " +
                             std::to_string(grid.points.rows()) + " points for " +
                             std::to_string(artifact.momenta.rows()) + " momenta rows");
  return grid;
}

namespace {

std::vector<std::string> mode_columns(Eigen::Index n) {
  std::vector<std::string> columns{"subject"};
  for (Eigen::Index m = 0; m < n; ++m) columns.push_back("mode_" + std::to_string(m + 1));
  return columns;
}

CsvTable subject_rows_csv(const MatX& values) {
  CsvTable table;
  table.columns = mode_columns(values.cols());
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    std::vector<std::string> row{std::to_string(i)};
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      row.push_back(format_csv_number(values(i, j)));
    table.rows.push_back(std::move(row));
  }
  return table;
}

MatX subject_rows_matrix(const CsvTable& table, const std::string& path) {
  if (table.columns.empty() || table.columns[0] != "subject")
    throw std::runtime_error(path + ": expected a leading subject column");
  MatX values(static_cast<Eigen::Index>(table.rows.size()),
              static_cast<Eigen::Index>(table.columns.size()) - 1);
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (std::size_t j = 1; j < table.columns.size(); ++j)
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) =
          parse_csv_number(table.rows[i][j]);
  return values;
}

}  // namespace

void save_shape_model(const ShapeModel& model, const Mesh& template_mesh,
                      const std::string& dir) {
  if (model.mean_shape.size() != 3 * template_mesh.points.rows())
    throw std::invalid_argument("shape model: template vertex count does not match the model");
  std::filesystem::create_directories(dir);

  Mesh mean_mesh = template_mesh;
  mean_mesh.points = unflatten(model.mean_shape);
  save_mesh(mean_mesh, dir + "/mean.vtk");

  nlohmann::json j;
  j["rows"] = model.modes.rows();
  j["cols"] = model.modes.cols();
  j["mode_scales"] =
      std::vector<double>(model.mode_scales.data(), model.mode_scales.data() + model.n_modes());
  j["score_mean"] =
      std::vector<double>(model.score_mean.data(), model.score_mean.data() + model.n_modes());
  j["score_std"] =
      std::vector<double>(model.score_std.data(), model.score_std.data() + model.n_modes());
  const std::string header = j.dump();
  std::ofstream out(dir + "/modes.bin", std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + dir + "/modes.bin for writing");
  out << "SSMMODES1 " << header.size() << "\n" << header;
  const RowMajorMat row_major = model.modes;
  out.write(reinterpret_cast<const char*>(row_major.data()),
            static_cast<std::streamsize>(row_major.size()) *
                static_cast<std::streamsize>(sizeof(double)));
  if (!out) throw std::runtime_error("write failed for " + dir + "/modes.bin");

  save_csv(subject_rows_csv(model.scores), dir + "/scores.csv");
  MatX z = model.scores;
  for (Eigen::Index m = 0; m < z.cols(); ++m)
    z.col(m) = (z.col(m).array() - model.score_mean[m]) / model.score_std[m];
  save_csv(subject_rows_csv(z), dir + "/zscores.csv");
}

ShapeModelArtifact load_shape_model(const std::string& dir) {
  ShapeModelArtifact artifact;
  artifact.template_mesh = load_mesh(dir + "/mean.vtk");
  artifact.model.mean_shape = flatten(artifact.template_mesh.points);

  const std::string path = dir + "/modes.bin";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string magic;
  std::size_t header_len = 0;
  in >> magic >> header_len;
  if (!in || magic != "SSMMODES1") throw std::runtime_error("bad magic in " + path);
  in.get();
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated header in " + path);
  Eigen::Index rows = 0, cols = 0;
  try {
    const nlohmann::json j = nlohmann::json::parse(header);
    rows = j.at("rows").get<Eigen::Index>();
    cols = j.at("cols").get<Eigen::Index>();
    const auto scales = j.at("mode_scales").get<std::vector<double>>();
    const auto mean = j.at("score_mean").get<std::vector<double>>();
    const auto stddev = j.at("score_std").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(scales.size()) != cols || mean.size() != scales.size() ||
        stddev.size() != scales.size())
      throw std::runtime_error("inconsistent mode statistics in " + path);
    artifact.model.mode_scales =
        Eigen::Map<const VecX>(scales.data(), static_cast<Eigen::Index>(scales.size()));
    artifact.model.score_mean =
        Eigen::Map<const VecX>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    artifact.model.score_std =
        Eigen::Map<const VecX>(stddev.data(), static_cast<Eigen::Index>(stddev.size()));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed header in " + path + ": " + e.what());
  }
  if (rows != artifact.model.mean_shape.size())
    throw std::runtime_error(path + ": mode rows do not match the mean mesh");
  RowMajorMat row_major(rows, cols);
  in.read(reinterpret_cast<char*>(row_major.data()),
          static_cast<std::streamsize>(row_major.size()) *
              static_cast<std::streamsize>(sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(row_major.size()) *
                                static_cast<std::streamsize>(sizeof(double)))
    throw std::runtime_error("truncated modes in " + path);
  artifact.model.modes = row_major;

  artifact.model.scores = subject_rows_matrix(load_csv(dir + "/scores.csv"), dir + "/scores.csv");
  if (artifact.model.scores.cols() != cols)
    throw std::runtime_error(dir + "/scores.csv: mode count does not match modes.bin");
  return artifact;
}

namespace {

void check_provenance(const std::string& tag) {
  if (tag != "original" && tag != "synthetic")
    throw std::invalid_argument("samples: provenance must be original or synthetic, got '" +
                                tag + "'");
}

}  // namespace

void save_samples_csv(const SampleSet& samples, const std::string& path) {
  if (static_cast<Eigen::Index>(samples.provenance.size()) != samples.z.rows())
    throw std::invalid_argument("samples: provenance count does not match the rows");
  CsvTable table;
  table.columns.push_back("provenance");
  for (Eigen::Index m = 0; m < samples.z.cols(); ++m)
    table.columns.push_back("z_" + std::to_string(m + 1));
  for (Eigen::Index i = 0; i < samples.z.rows(); ++i) {
    check_provenance(samples.provenance[static_cast<std::size_t>(i)]);
    std::vector<std::string> row{samples.provenance[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < samples.z.cols(); ++j)
      row.push_back(format_csv_number(samples.z(i, j)));
    table.rows.push_back(std::move(row));
  }
  save_csv(table, path);
}

SampleSet load_samples_csv(const std::string& path) {
  const CsvTable table = load_csv(path);
  if (table.columns.empty() || table.columns[0] != "provenance")
    throw std::runtime_error(path + ": expected a leading provenance column");
  SampleSet samples;
  samples.z.resize(static_cast<Eigen::Index>(table.rows.size()),
                   static_cast<Eigen::Index>(table.columns.size()) - 1);
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    check_provenance(table.rows[i][0]);
    samples.provenance.push_back(table.rows[i][0]);
    for (std::size_t j = 1; j < table.columns.size(); ++j)
      samples.z(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - 1)) =
          parse_csv_number(table.rows[i][j]);
  }
  return samples;
}

void save_activation_csv(const VecX& times_ms, const std::string& path) {
  CsvTable table;
  table.columns = {"node_id", "activation_time_ms"};
  for (Eigen::Index i = 0; i < times_ms.size(); ++i)
    table.rows.push_back({std::to_string(i), format_csv_number(times_ms[i])});
  save_csv(table, path);
}

VecX load_activation_csv(const std::string& path) {
  const CsvTable table = load_csv(path);
  if (table.columns != std::vector<std::string>{"node_id", "activation_time_ms"})
    throw std::runtime_error(path + ": unexpected columns for an activation table");
  VecX times(static_cast<Eigen::Index>(table.rows.size()));
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (table.rows[i][0] != std::to_string(i))
      throw std::runtime_error(path + ": node ids must be dense and ordered");
    times[static_cast<Eigen::Index>(i)] = parse_csv_number(table.rows[i][1]);
  }
  return times;
}

void save_tree_summary(const CoverageGrowth& growth, const std::string& path) {
  nlohmann::json j;
  j["node_count"] = growth.tree.n_nodes();
  j["coverage"] = growth.coverage;
  j["retries"] = growth.attempts - 1;
  j["reached_target"] = growth.reached_target;
  write_file(path, j.dump(2) + "\n");
}

void save_dataset_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
  CsvTable table;
  table.columns = {"label", "split", "mesh", "zscores", "activation"};
  for (const ManifestRow& r : rows) {
    if (r.split != "train" && r.split != "test")
      throw std::invalid_argument("manifest: split must be train or test, got '" + r.split + "'");
    table.rows.push_back({r.label, r.split, r.mesh_file, r.zscore_file, r.activation_file});
  }
  save_csv(table, path);
}

std::vector<ManifestRow> load_dataset_manifest(const std::string& path) {
  const CsvTable table = load_csv(path);
  if (table.columns != std::vector<std::string>{"label", "split", "mesh", "zscores", "activation"})
    throw std::runtime_error(path + ": unexpected manifest columns");
  std::vector<ManifestRow> rows;
  for (const std::vector<std::string>& r : table.rows) {
    if (r[1] != "train" && r[1] != "test")
      throw std::runtime_error(path + ": split must be train or test, got '" + r[1] + "'");
    rows.push_back({r[0], r[1], r[2], r[3], r[4]});
  }
  return rows;
}

}  // namespace cfield
