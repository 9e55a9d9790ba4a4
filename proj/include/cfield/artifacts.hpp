#pragma once

#include <string>
#include <vector>

#include "cfield/lddmm.hpp"
#include "cfield/mesh.hpp"
#include "cfield/purkinje.hpp"
#include "cfield/ssm.hpp"
#include "cfield/types.hpp"

namespace cfield {

// Plain comma-separated tables: one header line, no quoting, so cells must
// not contain commas or newlines.  Numbers print with enough digits to
// reload bit-exactly.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
};

std::string format_csv_number(double v);
double parse_csv_number(const std::string& cell);  // throws on trailing garbage

std::string to_csv(const CsvTable& table);
CsvTable parse_csv(const std::string& text);

void save_csv(const CsvTable& table, const std::string& path);
CsvTable load_csv(const std::string& path);

// All-numeric views of a table.
CsvTable matrix_csv(const std::vector<std::string>& columns, const MatX& values);
MatX csv_matrix(const CsvTable& table);

// ------------------------------------------------------------------------
// Self-contained SVG line charts (axes, ticks, legend).  Series are drawn in
// a fixed palette; coordinates are emitted deterministically.
struct ChartSeries {
  std::string label;
  VecX x;
  VecX y;
};

struct LineChart {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<ChartSeries> series;
  int width = 720;
  int height = 440;
};

std::string render_line_chart(const LineChart& chart);
void save_line_chart(const LineChart& chart, const std::string& path);

// ------------------------------------------------------------------------
// Deformation momenta: CSV with one row per control point plus a JSON
// sidecar (same path + ".json") recording kernel widths, the lattice box and
// spacing, and the optimizer cost history.
struct MomentaArtifact {
  Points momenta;
  double lambda_v = 6.0;
  double lambda_w = 6.0;
  double grid_spacing = 6.0;
  Vec3 grid_lo = Vec3::Zero();  // bounding box the lattice was built from
  Vec3 grid_hi = Vec3::Zero();
  std::vector<double> cost_history;
};

void save_momenta(const MomentaArtifact& artifact, const std::string& csv_path);
MomentaArtifact load_momenta(const std::string& csv_path);

// Rebuilds the control lattice recorded in the sidecar and checks it against
// the momenta row count.
ControlGrid momenta_grid(const MomentaArtifact& artifact);

// ------------------------------------------------------------------------
// Shape model directory: mean.vtk (template connectivity at the mean shape),
// modes.bin (JSON header + row-major float64 mode matrix), scores.csv and
// zscores.csv (one row per training subject).
void save_shape_model(const ShapeModel& model, const Mesh& template_mesh,
                      const std::string& dir);

struct ShapeModelArtifact {
  ShapeModel model;
  Mesh template_mesh;  // connectivity carrier; points hold the mean shape
};

ShapeModelArtifact load_shape_model(const std::string& dir);

// ------------------------------------------------------------------------
// Z-score sample sets with provenance ("original" | "synthetic").
struct SampleSet {
  MatX z;  // n x d
  std::vector<std::string> provenance;
};

void save_samples_csv(const SampleSet& samples, const std::string& path);
SampleSet load_samples_csv(const std::string& path);

// ------------------------------------------------------------------------
// Per-node activation times as (node_id, activation_time_ms) rows;
// never-activated nodes keep their negative marker.
void save_activation_csv(const VecX& times_ms, const std::string& path);
VecX load_activation_csv(const std::string& path);

// Conduction-tree summary JSON: node count, coverage, retries.
void save_tree_summary(const CoverageGrowth& growth, const std::string& path);

// ------------------------------------------------------------------------
// Cohort manifest: which files make up each geometry of a network dataset.
struct ManifestRow {
  std::string label;
  std::string split;  // "train" | "test"
  std::string mesh_file;
  std::string zscore_file;
  std::string activation_file;
};

void save_dataset_manifest(const std::vector<ManifestRow>& rows, const std::string& path);
std::vector<ManifestRow> load_dataset_manifest(const std::string& path);

}  // namespace cfield
