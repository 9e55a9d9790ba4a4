#pragma once

#include <stdexcept>
#include <string>

#include "cfield/mesh.hpp"

namespace cfield {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, int line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
        line_number(line) {}
  int line_number;
};

enum class MeshFormat { VtkAscii, Binary };

// Format is detected from content: the binary container starts with its
// magic, anything else is parsed as legacy ASCII VTK (unstructured grid,
// tet/tri/line cells, SCALARS/VECTORS/FIELD point data).  Labels travel as
// int SCALARS masks named "label_<name>".
Mesh load_mesh(const std::string& path);

void save_mesh(const Mesh& mesh, const std::string& path,
               MeshFormat format = MeshFormat::VtkAscii);

// Writes a polyline set (used for trees): points, line cells, point data.
void save_polylines_vtk(const Points& pts, const LineCells& lines,
                        const std::map<std::string, MatX>& point_data,
                        const std::string& path);

}  // namespace cfield
