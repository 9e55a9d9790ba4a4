#include "cfield/mesh_io.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace cfield {

namespace {

constexpr char kMagic[8] = {'C', 'F', 'M', 'E', 'S', 'H', '1', '\0'};
constexpr std::uint32_t kBinaryVersion = 1;

// ---------------------------------------------------------------- binary --

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error(path + ": truncated binary mesh");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& path) {
  const auto len = get<std::uint32_t>(is, path);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw std::runtime_error(path + ": truncated binary mesh");
  return s;
}

template <typename Derived>
void put_matrix(std::ostream& os, const Eigen::MatrixBase<Derived>& m) {
  using T = typename Derived::Scalar;
  put<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) put<T>(os, m(r, c));
}

template <typename Mat>
Mat get_matrix(std::istream& is, int cols, const std::string& path) {
  const auto rows = get<std::uint64_t>(is, path);
  Mat m(static_cast<int>(rows), cols);
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = get<typename Mat::Scalar>(is, path);
  return m;
}

void save_binary(const Mesh& mesh, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kBinaryVersion);
  put_matrix(os, mesh.points);
  put_matrix(os, mesh.tets);
  put_matrix(os, mesh.tris);
  put_matrix(os, mesh.lines);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(mesh.labels.size()));
  for (const auto& [name, ids] : mesh.labels) {
    put_string(os, name);
    put<std::uint64_t>(os, static_cast<std::uint64_t>(ids.size()));
    for (int i : ids) put<std::int32_t>(os, i);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(mesh.point_data.size()));
  for (const auto& [name, data] : mesh.point_data) {
    put_string(os, name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(data.cols()));
    put_matrix(os, data);
  }
  if (!os) throw std::runtime_error("write failure on '" + path + "'");
}

Mesh load_binary(std::istream& is, const std::string& path) {
  const auto version = get<std::uint32_t>(is, path);
  if (version != kBinaryVersion)
    throw std::runtime_error(path + ": unsupported binary mesh version " +
                             std::to_string(version));
  Mesh mesh;
  mesh.points = get_matrix<Points>(is, 3, path);
  mesh.tets = get_matrix<TetCells>(is, 4, path);
  mesh.tris = get_matrix<TriCells>(is, 3, path);
  mesh.lines = get_matrix<LineCells>(is, 2, path);
  const auto n_labels = get<std::uint32_t>(is, path);
  for (std::uint32_t k = 0; k < n_labels; ++k) {
    const std::string name = get_string(is, path);
    const auto count = get<std::uint64_t>(is, path);
    std::vector<int> ids(count);
    for (auto& i : ids) i = get<std::int32_t>(is, path);
    mesh.labels[name] = std::move(ids);
  }
  const auto n_fields = get<std::uint32_t>(is, path);
  for (std::uint32_t k = 0; k < n_fields; ++k) {
    const std::string name = get_string(is, path);
    const auto cols = get<std::uint32_t>(is, path);
    mesh.point_data[name] = get_matrix<MatX>(is, static_cast<int>(cols), path);
  }
  validate_mesh(mesh);
  return mesh;
}

// ------------------------------------------------------------------ ascii --

class LineReader {
 public:
  LineReader(std::istream& is, const std::string& path) : is_(is), path_(path) {}

  // Next non-empty line, split into tokens.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_;
      tokens.clear();
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  // Reads exactly n whitespace-separated numbers, spanning lines as needed.
  void numbers(std::size_t n, std::vector<double>& out) {
    out.clear();
    out.reserve(n);
    std::vector<std::string> tokens;
    while (out.size() < n) {
      if (!next(tokens)) fail("unexpected end of file while reading numbers");
      for (const auto& tok : tokens) {
        if (out.size() >= n) fail("more values than expected on line");
        try {
          std::size_t pos = 0;
          const double v = std::stod(tok, &pos);
          if (pos != tok.size()) throw std::invalid_argument(tok);
          out.push_back(v);
        } catch (const std::exception&) {
          fail("expected a number, got '" + tok + "'");
        }
      }
    }
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(path_, line_, what); }

  int line() const { return line_; }

 private:
  std::istream& is_;
  std::string path_;
  int line_ = 0;
};

int to_int(double v, LineReader& r) {
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v) r.fail("expected an integer index");
  return i;
}

Mesh load_vtk(std::istream& is, const std::string& path) {
  LineReader reader(is, path);
  std::vector<std::string> t;

  if (!reader.next(t) || t.empty() || t[0] != "#")
    reader.fail("expected '# vtk DataFile' header");
  if (!reader.next(t)) reader.fail("missing title line");
  if (!reader.next(t) || t[0] != "ASCII") reader.fail("only ASCII VTK files are supported");
  if (!reader.next(t) || t.size() < 2 || t[0] != "DATASET" || t[1] != "UNSTRUCTURED_GRID")
    reader.fail("only DATASET UNSTRUCTURED_GRID is supported");

  Mesh mesh;
  std::vector<double> nums;
  bool have_points = false;

  while (reader.next(t)) {
    if (t[0] == "POINTS") {
      if (t.size() < 3) reader.fail("POINTS needs a count and a type");
      int n = 0;
      try {
        n = std::stoi(t[1]);
      } catch (const std::exception&) {
        reader.fail("bad POINTS count '" + t[1] + "'");
      }
      reader.numbers(static_cast<std::size_t>(n) * 3, nums);
      mesh.points.resize(n, 3);
      for (int i = 0; i < n; ++i)
        mesh.points.row(i) << nums[3 * i], nums[3 * i + 1], nums[3 * i + 2];
      have_points = true;
    } else if (t[0] == "CELLS") {
      if (t.size() < 3) reader.fail("CELLS needs cell and entry counts");
      int n_cells = 0, n_entries = 0;
      try {
        n_cells = std::stoi(t[1]);
        n_entries = std::stoi(t[2]);
      } catch (const std::exception&) {
        reader.fail("bad CELLS counts");
      }
      reader.numbers(static_cast<std::size_t>(n_entries), nums);
      std::vector<std::vector<int>> cells;
      std::size_t k = 0;
      for (int c = 0; c < n_cells; ++c) {
        if (k >= nums.size()) reader.fail("CELLS entry count does not match data");
        const int sz = to_int(nums[k++], reader);
        if (sz < 2 || sz > 4) reader.fail("cell " + std::to_string(c) + " has unsupported size " +
                                          std::to_string(sz));
        std::vector<int> cell(sz);
        for (int j = 0; j < sz; ++j) {
          if (k >= nums.size()) reader.fail("CELLS entry count does not match data");
          cell[j] = to_int(nums[k++], reader);
        }
        cells.push_back(std::move(cell));
      }
      // CELL_TYPES must follow to disambiguate.
      if (!reader.next(t) || t[0] != "CELL_TYPES" || t.size() < 2)
        reader.fail("expected CELL_TYPES after CELLS");
      int n_types = 0;
      try {
        n_types = std::stoi(t[1]);
      } catch (const std::exception&) {
        reader.fail("bad CELL_TYPES count");
      }
      if (n_types != n_cells) reader.fail("CELL_TYPES count does not match CELLS");
      reader.numbers(static_cast<std::size_t>(n_types), nums);
      std::vector<std::array<int, 4>> tets;
      std::vector<std::array<int, 3>> tris;
      std::vector<std::array<int, 2>> lines;
      for (int c = 0; c < n_cells; ++c) {
        const int type = to_int(nums[c], reader);
        const auto& cell = cells[c];
        if (type == 10) {
          if (cell.size() != 4) reader.fail("tetra cell " + std::to_string(c) + " needs 4 vertices");
          tets.push_back({cell[0], cell[1], cell[2], cell[3]});
        } else if (type == 5) {
          if (cell.size() != 3)
            reader.fail("triangle cell " + std::to_string(c) + " needs 3 vertices");
          tris.push_back({cell[0], cell[1], cell[2]});
        } else if (type == 3) {
          if (cell.size() != 2) reader.fail("line cell " + std::to_string(c) + " needs 2 vertices");
          lines.push_back({cell[0], cell[1]});
        } else {
          reader.fail("unsupported cell type " + std::to_string(type) + " at cell " +
                      std::to_string(c));
        }
      }
      mesh.tets.resize(static_cast<int>(tets.size()), 4);
      for (std::size_t i = 0; i < tets.size(); ++i)
        mesh.tets.row(static_cast<int>(i)) << tets[i][0], tets[i][1], tets[i][2], tets[i][3];
      mesh.tris.resize(static_cast<int>(tris.size()), 3);
      for (std::size_t i = 0; i < tris.size(); ++i)
        mesh.tris.row(static_cast<int>(i)) << tris[i][0], tris[i][1], tris[i][2];
      mesh.lines.resize(static_cast<int>(lines.size()), 2);
      for (std::size_t i = 0; i < lines.size(); ++i)
        mesh.lines.row(static_cast<int>(i)) << lines[i][0], lines[i][1];
    } else if (t[0] == "POINT_DATA") {
      if (!have_points) reader.fail("POINT_DATA before POINTS");
      int n = 0;
      if (t.size() < 2) reader.fail("POINT_DATA needs a count");
      try {
        n = std::stoi(t[1]);
      } catch (const std::exception&) {
        reader.fail("bad POINT_DATA count");
      }
      if (n != mesh.n_points()) reader.fail("POINT_DATA count does not match POINTS");
      while (reader.next(t)) {
        if (t[0] == "SCALARS") {
          if (t.size() < 3) reader.fail("SCALARS needs a name and a type");
          const std::string name = t[1];
          const int comps = t.size() >= 4 ? std::stoi(t[3]) : 1;
          if (comps != 1) reader.fail("only single-component SCALARS are supported");
          if (!reader.next(t) || t[0] != "LOOKUP_TABLE")
            reader.fail("expected LOOKUP_TABLE after SCALARS");
          reader.numbers(static_cast<std::size_t>(n), nums);
          if (name.rfind("label_", 0) == 0) {
            std::vector<int> ids;
            for (int i = 0; i < n; ++i)
              if (nums[i] != 0.0) ids.push_back(i);
            mesh.labels[name.substr(6)] = std::move(ids);
          } else {
            MatX col(n, 1);
            for (int i = 0; i < n; ++i) col(i, 0) = nums[i];
            mesh.point_data[name] = std::move(col);
          }
        } else if (t[0] == "VECTORS") {
          if (t.size() < 3) reader.fail("VECTORS needs a name and a type");
          const std::string name = t[1];
          reader.numbers(static_cast<std::size_t>(n) * 3, nums);
          MatX data(n, 3);
          for (int i = 0; i < n; ++i)
            data.row(i) << nums[3 * i], nums[3 * i + 1], nums[3 * i + 2];
          mesh.point_data[name] = std::move(data);
        } else if (t[0] == "FIELD") {
          if (t.size() < 3) reader.fail("FIELD needs a name and an array count");
          int n_arrays = 0;
          try {
            n_arrays = std::stoi(t[2]);
          } catch (const std::exception&) {
            reader.fail("bad FIELD array count");
          }
          for (int a = 0; a < n_arrays; ++a) {
            if (!reader.next(t) || t.size() < 4) reader.fail("bad FIELD array header");
            const std::string name = t[0];
            const int comps = std::stoi(t[1]);
            const int tuples = std::stoi(t[2]);
            if (tuples != n) reader.fail("FIELD array '" + name + "' tuple count mismatch");
            if (comps != 1 && comps != 3)
              reader.fail("FIELD array '" + name + "' must have 1 or 3 components");
            reader.numbers(static_cast<std::size_t>(n) * comps, nums);
            MatX data(n, comps);
            for (int i = 0; i < n; ++i)
              for (int c = 0; c < comps; ++c) data(i, c) = nums[static_cast<std::size_t>(i) * comps + c];
            mesh.point_data[name] = std::move(data);
          }
        } else {
          reader.fail("unsupported POINT_DATA section '" + t[0] + "'");
        }
      }
    } else if (t[0] == "CELL_DATA") {
      reader.fail("CELL_DATA is not supported");
    } else {
      reader.fail("unsupported VTK section '" + t[0] + "'");
    }
  }
  if (!have_points) throw ParseError(path, reader.line(), "file has no POINTS section");
  validate_mesh(mesh);
  return mesh;
}

void write_number(std::ostream& os, double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

void save_vtk(const Mesh& mesh, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << "# vtk DataFile Version 3.0\n";
  os << "cardiofield mesh\n";
  os << "ASCII\n";
  os << "DATASET UNSTRUCTURED_GRID\n";
  const int n = mesh.n_points();
  os << "POINTS " << n << " double\n";
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      if (c) os << ' ';
      write_number(os, mesh.points(i, c));
    }
    os << '\n';
  }
  const int n_cells =
      static_cast<int>(mesh.tets.rows() + mesh.tris.rows() + mesh.lines.rows());
  const int n_entries = static_cast<int>(5 * mesh.tets.rows() + 4 * mesh.tris.rows() +
                                         3 * mesh.lines.rows());
  os << "CELLS " << n_cells << ' ' << n_entries << '\n';
  for (int t = 0; t < mesh.tets.rows(); ++t)
    os << "4 " << mesh.tets(t, 0) << ' ' << mesh.tets(t, 1) << ' ' << mesh.tets(t, 2) << ' '
       << mesh.tets(t, 3) << '\n';
  for (int t = 0; t < mesh.tris.rows(); ++t)
    os << "3 " << mesh.tris(t, 0) << ' ' << mesh.tris(t, 1) << ' ' << mesh.tris(t, 2) << '\n';
  for (int t = 0; t < mesh.lines.rows(); ++t)
    os << "2 " << mesh.lines(t, 0) << ' ' << mesh.lines(t, 1) << '\n';
  os << "CELL_TYPES " << n_cells << '\n';
  for (int t = 0; t < mesh.tets.rows(); ++t) os << "10\n";
  for (int t = 0; t < mesh.tris.rows(); ++t) os << "5\n";
  for (int t = 0; t < mesh.lines.rows(); ++t) os << "3\n";

  if (!mesh.labels.empty() || !mesh.point_data.empty()) {
    os << "POINT_DATA " << n << '\n';
    for (const auto& [name, ids] : mesh.labels) {
      os << "SCALARS label_" << name << " int 1\n";
      os << "LOOKUP_TABLE default\n";
      std::vector<char> mask(static_cast<std::size_t>(n), 0);
      for (int i : ids) mask[static_cast<std::size_t>(i)] = 1;
      for (int i = 0; i < n; ++i) os << static_cast<int>(mask[static_cast<std::size_t>(i)]) << '\n';
    }
    for (const auto& [name, data] : mesh.point_data) {
      if (data.cols() == 1) {
        os << "SCALARS " << name << " double 1\n";
        os << "LOOKUP_TABLE default\n";
        for (int i = 0; i < n; ++i) {
          write_number(os, data(i, 0));
          os << '\n';
        }
      } else {
        os << "VECTORS " << name << " double\n";
        for (int i = 0; i < n; ++i) {
          for (int c = 0; c < 3; ++c) {
            if (c) os << ' ';
            write_number(os, data(i, c));
          }
          os << '\n';
        }
      }
    }
  }
  if (!os) throw std::runtime_error("write failure on '" + path + "'");
}

}  // namespace

Mesh load_mesh(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  char head[8] = {};
  is.read(head, sizeof(head));
  if (is.gcount() == 8 && std::memcmp(head, kMagic, sizeof(kMagic)) == 0)
    return load_binary(is, path);
  is.clear();
  is.seekg(0);
  return load_vtk(is, path);
}

void save_mesh(const Mesh& mesh, const std::string& path, MeshFormat format) {
  validate_mesh(mesh);
  if (format == MeshFormat::Binary)
    save_binary(mesh, path);
  else
    save_vtk(mesh, path);
}

void save_polylines_vtk(const Points& pts, const LineCells& lines,
                        const std::map<std::string, MatX>& point_data,
                        const std::string& path) {
  Mesh mesh;
  mesh.points = pts;
  mesh.lines = lines;
  mesh.point_data = point_data;
  save_mesh(mesh, path, MeshFormat::VtkAscii);
}

}  // namespace cfield
