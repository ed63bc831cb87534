#pragma once

#include <Eigen/Sparse>
#include <array>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace femagents::fem {

class FemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Formulation { plane_strain, plane_stress };

struct Material {
  double youngs_modulus = 1e9;  // Pa
  double poisson_ratio = 0.3;
  Formulation formulation = Formulation::plane_strain;
};

struct LameParameters {
  double lambda = 0.0;  // Pa
  double mu = 0.0;      // Pa
};

// mu = E / (2(1+nu)); lambda per formulation.
LameParameters lame_parameters(const Material& mat);

enum BoundaryTag : unsigned {
  kTagLeft = 1u,
  kTagRight = 2u,
  kTagTop = 4u,
  kTagBottom = 8u,
  kTagHole = 16u,
};

// Triangulated 2D domain; triangles are counterclockwise, boundary_tags is a
// per-node bitmask.
struct Mesh {
  std::vector<std::array<double, 2>> nodes;
  std::vector<std::array<int, 3>> triangles;
  std::vector<unsigned> boundary_tags;

  int node_count() const { return static_cast<int>(nodes.size()); }
  int triangle_count() const { return static_cast<int>(triangles.size()); }
  double triangle_area(int t) const;
  std::array<double, 2> centroid(int t) const;
};

// Unit square [0,1]^2, crossed (union-jack) pattern: every cell carries a
// center node and four triangles. (n+1)^2 + n^2 nodes, 4n^2 triangles.
Mesh build_square_mesh(int cells_per_side);

// Removes triangles whose centroid lies strictly inside the circle, drops
// orphaned nodes and renumbers. Nodes that lost an incident triangle are
// tagged hole (traction-free).
Mesh punch_hole(const Mesh& mesh, std::array<double, 2> center, double radius);

struct EdgeCondition {
  unsigned tag = 0;  // BoundaryTag to match
  bool fix_x = true;
  bool fix_y = true;
  double ux = 0.0;  // m
  double uy = 0.0;  // m
};

// Ordered list; a node on two constrained edges takes the first-listed
// edge's value (corner rule).
using BCSpec = std::vector<EdgeCondition>;

struct DisplacementField {
  std::vector<std::array<double, 2>> values;  // per node (ux, uy), m
};

struct StressField {
  std::vector<double> sigma_xy;  // per node, Pa
};

// Constant-strain-triangle assembly of the linear elasticity weak form;
// symmetric by construction. Throws on degenerate triangles.
Eigen::SparseMatrix<double> assemble_stiffness(const Mesh& mesh, const Material& mat);

// Symmetric elimination of the constrained degrees of freedom, direct sparse
// factorization of the reduced system, residual checked to 1e-10 relative.
DisplacementField solve_dirichlet(const Eigen::SparseMatrix<double>& stiffness,
                                  const BCSpec& bcs, const Mesh& mesh);

// Element-constant sigma_xy = mu (dux/dy + duy/dx), area-weighted nodal
// average.
StressField stress_xy(const Mesh& mesh, const DisplacementField& field, const Material& mat);

struct StepSolution {
  Mesh mesh;
  DisplacementField displacement;
  std::optional<StressField> stress;  // step 4 only
};

struct StepOptions {
  bool shear_y_only = false;  // step 2/3: constrain only uy on the right edge
};

// The four query scenarios: 1 = right-edge pull, 2 = right-edge shear,
// 3 = shear on the holed plate, 4 = step 3 plus sigma_xy.
StepSolution solve_step(int step, int n, const Material& mat, const StepOptions& opts = {});

BCSpec step_boundary_conditions(int step, const StepOptions& opts = {});

// --- Field files -----------------------------------------------------------

// Scattered nodal field as persisted: positions plus 1 or 2 components per
// node (values stored row-major).
struct FieldData {
  int components = 2;
  std::vector<std::array<double, 2>> points;
  std::vector<double> values;

  int point_count() const { return static_cast<int>(points.size()); }
};

FieldData displacement_as_field(const Mesh& mesh, const DisplacementField& field);
FieldData stress_as_field(const Mesh& mesh, const StressField& field);

class FieldParseError : public std::runtime_error {
 public:
  FieldParseError(const std::string& what, int line) : std::runtime_error(what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Text format: `femagents-field v1`, then `<node_count> <components>`, then
// one `x y v1 [v2]` row per node, 17 significant digits.
void write_field(const FieldData& field, const std::filesystem::path& path);
FieldData read_field(const std::filesystem::path& path);

class IncomparableFields : public FemError {
 public:
  using FemError::FemError;
};

// Relative L2 error over an m x m probe grid on [0,1]^2, with each field
// interpolated locally linearly from its nodal values. Probe points not
// covered by both fields (holes, outside the domain) are skipped; more than
// 50% skipped raises IncomparableFields.
double compare_fields(const FieldData& a, const FieldData& b, int probe_per_side = 21);

}  // namespace femagents::fem
