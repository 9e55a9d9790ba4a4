#pragma once

#include "cfield/mesh.hpp"

namespace cfield {

// Anatomical summary of a labelled biventricular mesh.  Input coordinates
// are millimetres; the reported values use the clinical units below.
struct GeometryMetrics {
  double myocardial_volume_ml = 0.0;
  double lv_endo_area_cm2 = 0.0;
  double rv_endo_area_cm2 = 0.0;
  double mean_wall_thickness_cm = 0.0;
  double apicobasal_height_cm = 0.0;
  int apex_vertex = -1;
};

// Requires tetrahedra and the five labels (lv_endo, rv_endo, epi, base,
// apex).  Volume sums positively oriented tets; areas sum label triangles;
// wall thickness is sampled at endocardial vertices as the smaller of the
// distances to the epicardium and to the opposite endocardium; the apex is
// the epicardial vertex farthest from the least-squares base plane and the
// height is its distance to that plane.
GeometryMetrics compute_metrics(const Mesh& mesh);

// The apex rule above, usable on meshes that do not carry an apex label yet.
int find_apex_vertex(const Mesh& mesh);

}  // namespace cfield
