#include "femagents/fem.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace femagents::fem {
namespace {

constexpr double kCoordEps = 1e-12;

double cross2(const std::array<double, 2>& a, const std::array<double, 2>& b,
              const std::array<double, 2>& c) {
  return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
}

struct ElementGeometry {
  double area;
  std::array<double, 3> b;  // d/dx coefficients of the shape functions
  std::array<double, 3> c;  // d/dy coefficients
};

ElementGeometry element_geometry(const Mesh& mesh, int t) {
  const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
  const auto& p0 = mesh.nodes[static_cast<std::size_t>(tri[0])];
  const auto& p1 = mesh.nodes[static_cast<std::size_t>(tri[1])];
  const auto& p2 = mesh.nodes[static_cast<std::size_t>(tri[2])];
  double twice_area = cross2(p0, p1, p2);
  ElementGeometry geom;
  geom.area = 0.5 * twice_area;
  if (geom.area < 1e-14)
    throw FemError("degenerate triangle " + std::to_string(t) + " (area " +
                   std::to_string(geom.area) + ")");
  const std::array<const std::array<double, 2>*, 3> p = {&p0, &p1, &p2};
  for (int i = 0; i < 3; ++i) {
    const auto& pj = *p[(i + 1) % 3];
    const auto& pk = *p[(i + 2) % 3];
    geom.b[static_cast<std::size_t>(i)] = (pj[1] - pk[1]) / twice_area;
    geom.c[static_cast<std::size_t>(i)] = (pk[0] - pj[0]) / twice_area;
  }
  return geom;
}

Eigen::Matrix3d constitutive_matrix(const Material& mat) {
  LameParameters lame = lame_parameters(mat);
  Eigen::Matrix3d d = Eigen::Matrix3d::Zero();
  d(0, 0) = d(1, 1) = lame.lambda + 2.0 * lame.mu;
  d(0, 1) = d(1, 0) = lame.lambda;
  d(2, 2) = lame.mu;
  return d;
}

}  // namespace

LameParameters lame_parameters(const Material& mat) {
  const double e = mat.youngs_modulus;
  const double nu = mat.poisson_ratio;
  if (!(e > 0.0)) throw FemError("Young's modulus must be positive");
  if (!(nu >= 0.0 && nu < 0.5)) throw FemError("Poisson ratio must be in [0, 0.5)");
  LameParameters lame;
  lame.mu = e / (2.0 * (1.0 + nu));
  lame.lambda = mat.formulation == Formulation::plane_strain
                    ? e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
                    : e * nu / (1.0 - nu * nu);
  return lame;
}

double Mesh::triangle_area(int t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  return 0.5 * cross2(nodes[static_cast<std::size_t>(tri[0])],
                      nodes[static_cast<std::size_t>(tri[1])],
                      nodes[static_cast<std::size_t>(tri[2])]);
}

std::array<double, 2> Mesh::centroid(int t) const {
  const auto& tri = triangles[static_cast<std::size_t>(t)];
  std::array<double, 2> c = {0.0, 0.0};
  for (int v : tri) {
    c[0] += nodes[static_cast<std::size_t>(v)][0] / 3.0;
    c[1] += nodes[static_cast<std::size_t>(v)][1] / 3.0;
  }
  return c;
}

Mesh build_square_mesh(int cells_per_side) {
  if (cells_per_side < 1) throw FemError("cells_per_side must be >= 1");
  const int n = cells_per_side;
  const double h = 1.0 / n;
  Mesh mesh;
  mesh.nodes.reserve(static_cast<std::size_t>((n + 1) * (n + 1) + n * n));

  auto grid = [n](int i, int j) { return j * (n + 1) + i; };
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) mesh.nodes.push_back({i * h, j * h});
  const int center_base = (n + 1) * (n + 1);
  auto center = [&](int i, int j) { return center_base + j * n + i; };
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) mesh.nodes.push_back({(i + 0.5) * h, (j + 0.5) * h});

  mesh.triangles.reserve(static_cast<std::size_t>(4 * n * n));
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      int a = grid(i, j), b = grid(i + 1, j), c = grid(i + 1, j + 1), d = grid(i, j + 1);
      int m = center(i, j);
      mesh.triangles.push_back({a, b, m});
      mesh.triangles.push_back({b, c, m});
      mesh.triangles.push_back({c, d, m});
      mesh.triangles.push_back({d, a, m});
    }
  }

  mesh.boundary_tags.assign(mesh.nodes.size(), 0u);
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
    const auto& p = mesh.nodes[i];
    if (std::abs(p[0]) < kCoordEps) mesh.boundary_tags[i] |= kTagLeft;
    if (std::abs(p[0] - 1.0) < kCoordEps) mesh.boundary_tags[i] |= kTagRight;
    if (std::abs(p[1]) < kCoordEps) mesh.boundary_tags[i] |= kTagBottom;
    if (std::abs(p[1] - 1.0) < kCoordEps) mesh.boundary_tags[i] |= kTagTop;
  }
  return mesh;
}

Mesh punch_hole(const Mesh& mesh, std::array<double, 2> center, double radius) {
  if (radius <= 0.0) return mesh;
  const double r2 = radius * radius;
  std::vector<char> removed(mesh.triangles.size(), 0);
  std::vector<char> touches_removed(mesh.nodes.size(), 0);
  std::size_t removed_count = 0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    auto c = mesh.centroid(static_cast<int>(t));
    double dx = c[0] - center[0], dy = c[1] - center[1];
    if (dx * dx + dy * dy < r2) {
      removed[t] = 1;
      ++removed_count;
      for (int v : mesh.triangles[t]) touches_removed[static_cast<std::size_t>(v)] = 1;
    }
  }
  if (removed_count == mesh.triangles.size())
    throw FemError("degenerate_mesh: hole removal emptied the mesh");
  if (removed_count == 0) return mesh;

  std::vector<char> used(mesh.nodes.size(), 0);
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (removed[t]) continue;
    for (int v : mesh.triangles[t]) used[static_cast<std::size_t>(v)] = 1;
  }

  Mesh out;
  std::vector<int> remap(mesh.nodes.size(), -1);
  for (std::size_t i = 0; i < mesh.nodes.size(); ++i) {
    if (!used[i]) continue;
    remap[i] = out.node_count();
    out.nodes.push_back(mesh.nodes[i]);
    unsigned tags = mesh.boundary_tags[i];
    if (touches_removed[i]) tags |= kTagHole;  // newly exposed, traction-free
    out.boundary_tags.push_back(tags);
  }
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (removed[t]) continue;
    const auto& tri = mesh.triangles[t];
    out.triangles.push_back({remap[static_cast<std::size_t>(tri[0])],
                             remap[static_cast<std::size_t>(tri[1])],
                             remap[static_cast<std::size_t>(tri[2])]});
  }
  return out;
}

Eigen::SparseMatrix<double> assemble_stiffness(const Mesh& mesh, const Material& mat) {
  const Eigen::Matrix3d d = constitutive_matrix(mat);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(mesh.triangles.size() * 36);
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    ElementGeometry geom = element_geometry(mesh, t);
    Eigen::Matrix<double, 3, 6> strain_op = Eigen::Matrix<double, 3, 6>::Zero();
    for (int i = 0; i < 3; ++i) {
      strain_op(0, 2 * i) = geom.b[static_cast<std::size_t>(i)];
      strain_op(1, 2 * i + 1) = geom.c[static_cast<std::size_t>(i)];
      strain_op(2, 2 * i) = geom.c[static_cast<std::size_t>(i)];
      strain_op(2, 2 * i + 1) = geom.b[static_cast<std::size_t>(i)];
    }
    Eigen::Matrix<double, 6, 6> ke = geom.area * strain_op.transpose() * d * strain_op;
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    for (int i = 0; i < 6; ++i) {
      int row = 2 * tri[static_cast<std::size_t>(i / 2)] + i % 2;
      for (int j = 0; j < 6; ++j) {
        int col = 2 * tri[static_cast<std::size_t>(j / 2)] + j % 2;
        triplets.emplace_back(row, col, ke(i, j));
      }
    }
  }
  Eigen::SparseMatrix<double> stiffness(2 * mesh.node_count(), 2 * mesh.node_count());
  stiffness.setFromTriplets(triplets.begin(), triplets.end());
  return stiffness;
}

DisplacementField solve_dirichlet(const Eigen::SparseMatrix<double>& stiffness,
                                  const BCSpec& bcs, const Mesh& mesh) {
  const int dof_count = 2 * mesh.node_count();
  if (stiffness.rows() != dof_count)
    throw FemError("stiffness size does not match mesh");

  std::vector<char> constrained(static_cast<std::size_t>(dof_count), 0);
  Eigen::VectorXd prescribed = Eigen::VectorXd::Zero(dof_count);
  for (int node = 0; node < mesh.node_count(); ++node) {
    unsigned tags = mesh.boundary_tags[static_cast<std::size_t>(node)];
    for (const EdgeCondition& bc : bcs) {
      if (!(tags & bc.tag)) continue;
      if (bc.fix_x) {
        constrained[static_cast<std::size_t>(2 * node)] = 1;
        prescribed[2 * node] = bc.ux;
      }
      if (bc.fix_y) {
        constrained[static_cast<std::size_t>(2 * node + 1)] = 1;
        prescribed[2 * node + 1] = bc.uy;
      }
      break;  // corner rule: first matching edge wins
    }
  }

  if (std::find(constrained.begin(), constrained.end(), char{1}) == constrained.end())
    throw FemError("no Dirichlet constraints: the system is singular");

  std::vector<int> free_index(static_cast<std::size_t>(dof_count), -1);
  int free_count = 0;
  for (int i = 0; i < dof_count; ++i)
    if (!constrained[static_cast<std::size_t>(i)]) free_index[static_cast<std::size_t>(i)] = free_count++;

  Eigen::VectorXd solution = prescribed;
  if (free_count > 0) {
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(free_count);
    for (int col = 0; col < stiffness.outerSize(); ++col) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(stiffness, col); it; ++it) {
        int r = static_cast<int>(it.row());
        int c = static_cast<int>(it.col());
        if (constrained[static_cast<std::size_t>(r)]) continue;
        if (constrained[static_cast<std::size_t>(c)])
          rhs[free_index[static_cast<std::size_t>(r)]] -= it.value() * prescribed[c];
        else
          triplets.emplace_back(free_index[static_cast<std::size_t>(r)],
                                free_index[static_cast<std::size_t>(c)], it.value());
      }
    }
    Eigen::SparseMatrix<double> reduced(free_count, free_count);
    reduced.setFromTriplets(triplets.begin(), triplets.end());

    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(reduced);
    if (solver.info() != Eigen::Success)
      throw FemError("insufficient_constraints: reduced system factorization failed");
    Eigen::VectorXd reduced_solution = solver.solve(rhs);
    if (!reduced_solution.allFinite())
      throw FemError("insufficient_constraints: singular reduced system");
    double residual = (reduced * reduced_solution - rhs).norm();
    double scale = std::max(rhs.norm(), 1e-30);
    if (residual / scale > 1e-10)
      throw FemError("insufficient_constraints: residual " + std::to_string(residual / scale));

    for (int i = 0; i < dof_count; ++i)
      if (free_index[static_cast<std::size_t>(i)] >= 0)
        solution[i] = reduced_solution[free_index[static_cast<std::size_t>(i)]];
  }

  DisplacementField field;
  field.values.resize(static_cast<std::size_t>(mesh.node_count()));
  for (int node = 0; node < mesh.node_count(); ++node)
    field.values[static_cast<std::size_t>(node)] = {solution[2 * node], solution[2 * node + 1]};
  return field;
}

StressField stress_xy(const Mesh& mesh, const DisplacementField& field, const Material& mat) {
  if (static_cast<int>(field.values.size()) != mesh.node_count())
    throw FemError("field does not match mesh");
  const double mu = lame_parameters(mat).mu;
  std::vector<double> weighted(static_cast<std::size_t>(mesh.node_count()), 0.0);
  std::vector<double> weight(static_cast<std::size_t>(mesh.node_count()), 0.0);
  for (int t = 0; t < mesh.triangle_count(); ++t) {
    ElementGeometry geom = element_geometry(mesh, t);
    const auto& tri = mesh.triangles[static_cast<std::size_t>(t)];
    double dux_dy = 0.0, duy_dx = 0.0;
    for (int i = 0; i < 3; ++i) {
      const auto& u = field.values[static_cast<std::size_t>(tri[static_cast<std::size_t>(i)])];
      dux_dy += geom.c[static_cast<std::size_t>(i)] * u[0];
      duy_dx += geom.b[static_cast<std::size_t>(i)] * u[1];
    }
    double sigma = mu * (dux_dy + duy_dx);
    for (int v : tri) {
      weighted[static_cast<std::size_t>(v)] += geom.area * sigma;
      weight[static_cast<std::size_t>(v)] += geom.area;
    }
  }
  StressField stress;
  stress.sigma_xy.resize(static_cast<std::size_t>(mesh.node_count()));
  for (int i = 0; i < mesh.node_count(); ++i)
    stress.sigma_xy[static_cast<std::size_t>(i)] =
        weight[static_cast<std::size_t>(i)] > 0.0
            ? weighted[static_cast<std::size_t>(i)] / weight[static_cast<std::size_t>(i)]
            : 0.0;
  return stress;
}

BCSpec step_boundary_conditions(int step, const StepOptions& opts) {
  switch (step) {
    case 1:
      return {{kTagLeft, true, true, 0.0, 0.0}, {kTagRight, true, true, 0.1, 0.0}};
    case 2:
    case 3:
    case 4:
      return {{kTagLeft, true, true, 0.0, 0.0},
              {kTagRight, !opts.shear_y_only, true, 0.0, 0.1}};
    default:
      throw FemError("step must be in 1..4");
  }
}

StepSolution solve_step(int step, int n, const Material& mat, const StepOptions& opts) {
  if (step < 1 || step > 4) throw FemError("step must be in 1..4");
  StepSolution solution;
  solution.mesh = build_square_mesh(n);
  if (step >= 3) solution.mesh = punch_hole(solution.mesh, {0.5, 0.5}, 0.2);
  auto stiffness = assemble_stiffness(solution.mesh, mat);
  solution.displacement =
      solve_dirichlet(stiffness, step_boundary_conditions(step, opts), solution.mesh);
  if (step == 4)
    solution.stress = stress_xy(solution.mesh, solution.displacement, mat);
  return solution;
}

FieldData displacement_as_field(const Mesh& mesh, const DisplacementField& field) {
  FieldData out;
  out.components = 2;
  out.points = mesh.nodes;
  out.values.reserve(field.values.size() * 2);
  for (const auto& u : field.values) {
    out.values.push_back(u[0]);
    out.values.push_back(u[1]);
  }
  return out;
}

FieldData stress_as_field(const Mesh& mesh, const StressField& field) {
  FieldData out;
  out.components = 1;
  out.points = mesh.nodes;
  out.values = field.sigma_xy;
  return out;
}

void write_field(const FieldData& field, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FemError("cannot write field file: " + path.string());
  out << "femagents-field v1\n";
  out << field.point_count() << ' ' << field.components << '\n';
  char buf[96];
  for (int i = 0; i < field.point_count(); ++i) {
    const auto& p = field.points[static_cast<std::size_t>(i)];
    std::snprintf(buf, sizeof buf, "%.17g %.17g", p[0], p[1]);
    out << buf;
    for (int c = 0; c < field.components; ++c) {
      std::snprintf(buf, sizeof buf, " %.17g",
                    field.values[static_cast<std::size_t>(i * field.components + c)]);
      out << buf;
    }
    out << '\n';
  }
}

FieldData read_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FemError("cannot read field file: " + path.string());
  std::string line;
  int lineno = 0;

  if (!std::getline(in, line)) throw FieldParseError("empty field file", 1);
  ++lineno;
  if (line != "femagents-field v1")
    throw FieldParseError("bad header magic: " + line, lineno);

  if (!std::getline(in, line)) throw FieldParseError("missing count line", 2);
  ++lineno;
  int count = 0, components = 0;
  {
    std::istringstream hdr(line);
    if (!(hdr >> count >> components) || count < 0 ||
        (components != 1 && components != 2))
      throw FieldParseError("bad count line: " + line, lineno);
  }

  FieldData field;
  field.components = components;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (field.point_count() >= count)
      throw FieldParseError("more rows than declared count", lineno);
    std::istringstream row(line);
    std::array<double, 2> p{};
    if (!(row >> p[0] >> p[1])) throw FieldParseError("bad row: " + line, lineno);
    double v = 0.0;
    std::vector<double> vals;
    for (int c = 0; c < components; ++c) {
      if (!(row >> v)) throw FieldParseError("bad row: " + line, lineno);
      vals.push_back(v);
    }
    field.points.push_back(p);
    for (double x : vals) field.values.push_back(x);
  }
  if (field.point_count() != count)
    throw FieldParseError("row count " + std::to_string(field.point_count()) +
                              " does not match declared " + std::to_string(count),
                          lineno + 1);
  return field;
}

namespace {

// Uniform cell index over the bounding box of the points.
class PointIndex {
 public:
  PointIndex(const FieldData& field, double cell_size)
      : field_(field), cell_(std::max(cell_size, 1e-9)) {
    for (int i = 0; i < field.point_count(); ++i)
      cells_[key(field.points[static_cast<std::size_t>(i)])].push_back(i);
  }

  // All point indices within `radius` of p.
  std::vector<int> within(const std::array<double, 2>& p, double radius) const {
    std::vector<int> out;
    int span = static_cast<int>(std::ceil(radius / cell_)) + 1;
    long long cx = coord(p[0]), cy = coord(p[1]);
    double r2 = radius * radius;
    for (long long gx = cx - span; gx <= cx + span; ++gx) {
      for (long long gy = cy - span; gy <= cy + span; ++gy) {
        auto it = cells_.find((gx << 32) ^ (gy & 0xffffffffLL));
        if (it == cells_.end()) continue;
        for (int i : it->second) {
          const auto& q = field_.points[static_cast<std::size_t>(i)];
          double dx = q[0] - p[0], dy = q[1] - p[1];
          if (dx * dx + dy * dy <= r2) out.push_back(i);
        }
      }
    }
    return out;
  }

  double nearest_distance(const std::array<double, 2>& p, double search_cap) const {
    double best = std::numeric_limits<double>::infinity();
    for (double r = cell_; r <= search_cap; r *= 2.0) {
      for (int i : within(p, r)) {
        const auto& q = field_.points[static_cast<std::size_t>(i)];
        double d = std::hypot(q[0] - p[0], q[1] - p[1]);
        best = std::min(best, d);
      }
      if (best <= r) return best;
    }
    return best;
  }

 private:
  long long coord(double x) const { return static_cast<long long>(std::floor(x / cell_)); }
  long long key(const std::array<double, 2>& p) const {
    return (coord(p[0]) << 32) ^ (coord(p[1]) & 0xffffffffLL);
  }
  const FieldData& field_;
  double cell_;
  std::unordered_map<long long, std::vector<int>> cells_;
};

double estimate_spacing(const FieldData& field, const PointIndex& index) {
  std::vector<double> nearest;
  int stride = std::max(1, field.point_count() / 200);
  for (int i = 0; i < field.point_count(); i += stride) {
    const auto& p = field.points[static_cast<std::size_t>(i)];
    double best = std::numeric_limits<double>::infinity();
    for (int j : index.within(p, 0.2)) {
      if (j == i) continue;
      const auto& q = field.points[static_cast<std::size_t>(j)];
      best = std::min(best, std::hypot(q[0] - p[0], q[1] - p[1]));
    }
    if (std::isfinite(best)) nearest.push_back(best);
  }
  if (nearest.empty()) return 0.05;
  std::nth_element(nearest.begin(), nearest.begin() + nearest.size() / 2, nearest.end());
  return nearest[nearest.size() / 2];
}

struct Interpolator {
  const FieldData& field;
  PointIndex index;
  double spacing;

  explicit Interpolator(const FieldData& f)
      : field(f), index(f, 0.05), spacing(estimate_spacing(f, index)) {}

  bool covers(const std::array<double, 2>& p) const {
    return index.nearest_distance(p, 1.0) <= 2.0 * spacing;
  }

  // Piecewise-linear interpolation: barycentric evaluation on the smallest
  // triangle of nearby nodes containing the probe point. Falls back to a
  // local linear least-squares fit when no containing triangle exists
  // (probes on jagged hole boundaries).
  std::vector<double> interpolate(const std::array<double, 2>& p) const {
    std::vector<int> neighbors = index.within(p, 2.5 * spacing);
    if (neighbors.size() < 6) neighbors = index.within(p, 4.0 * spacing);
    std::vector<double> out(static_cast<std::size_t>(field.components), 0.0);
    if (neighbors.empty()) return out;

    std::sort(neighbors.begin(), neighbors.end(), [&](int lhs, int rhs) {
      const auto& a = field.points[static_cast<std::size_t>(lhs)];
      const auto& b = field.points[static_cast<std::size_t>(rhs)];
      double da = (a[0] - p[0]) * (a[0] - p[0]) + (a[1] - p[1]) * (a[1] - p[1]);
      double db = (b[0] - p[0]) * (b[0] - p[0]) + (b[1] - p[1]) * (b[1] - p[1]);
      return da < db;
    });
    if (neighbors.size() > 12) neighbors.resize(12);

    // Probe at (or numerically on top of) a sample point: return its value.
    {
      const auto& q = field.points[static_cast<std::size_t>(neighbors.front())];
      if (std::hypot(q[0] - p[0], q[1] - p[1]) < 1e-9 * spacing) {
        for (int c = 0; c < field.components; ++c)
          out[static_cast<std::size_t>(c)] =
              field.values[static_cast<std::size_t>(neighbors.front() * field.components + c)];
        return out;
      }
    }

    // Several containing triangles can share the minimal area (probes on cell
    // boundaries of structured meshes); average their interpolants so the
    // result does not depend on enumeration order.
    const double bary_eps = 1e-9;
    struct Candidate {
      double area;
      std::array<int, 3> tri;
      std::array<double, 3> w;
    };
    double best_area = std::numeric_limits<double>::infinity();
    std::vector<Candidate> candidates;
    for (std::size_t i = 0; i < neighbors.size(); ++i) {
      const auto& a = field.points[static_cast<std::size_t>(neighbors[i])];
      for (std::size_t j = i + 1; j < neighbors.size(); ++j) {
        const auto& b = field.points[static_cast<std::size_t>(neighbors[j])];
        for (std::size_t k = j + 1; k < neighbors.size(); ++k) {
          const auto& c = field.points[static_cast<std::size_t>(neighbors[k])];
          double det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
          double area = std::abs(det) * 0.5;
          if (area < 1e-14 || area > best_area * (1.0 + 1e-9)) continue;
          double w0 = ((b[0] - p[0]) * (c[1] - p[1]) - (b[1] - p[1]) * (c[0] - p[0])) / det;
          double w1 = ((c[0] - p[0]) * (a[1] - p[1]) - (c[1] - p[1]) * (a[0] - p[0])) / det;
          double w2 = 1.0 - w0 - w1;
          if (w0 < -bary_eps || w1 < -bary_eps || w2 < -bary_eps) continue;
          if (area < best_area) best_area = std::min(best_area, area);
          candidates.push_back({area, {neighbors[i], neighbors[j], neighbors[k]}, {w0, w1, w2}});
        }
      }
    }

    std::size_t used = 0;
    for (const Candidate& cand : candidates) {
      if (cand.area > best_area * (1.0 + 1e-9)) continue;
      ++used;
      for (int c = 0; c < field.components; ++c) {
        double v = 0.0;
        for (int t = 0; t < 3; ++t)
          v += cand.w[static_cast<std::size_t>(t)] *
               field.values[static_cast<std::size_t>(cand.tri[static_cast<std::size_t>(t)] *
                                                         field.components +
                                                     c)];
        out[static_cast<std::size_t>(c)] += v;
      }
    }
    if (used > 0) {
      for (double& v : out) v /= static_cast<double>(used);
      return out;
    }
    std::fill(out.begin(), out.end(), 0.0);

    for (int c = 0; c < field.components; ++c) {
      Eigen::Matrix3d normal = Eigen::Matrix3d::Zero();
      Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
      for (int i : neighbors) {
        const auto& q = field.points[static_cast<std::size_t>(i)];
        Eigen::Vector3d basis(1.0, q[0] - p[0], q[1] - p[1]);
        double v = field.values[static_cast<std::size_t>(i * field.components + c)];
        normal += basis * basis.transpose();
        rhs += basis * v;
      }
      Eigen::FullPivLU<Eigen::Matrix3d> lu(normal);
      if (lu.isInvertible()) {
        out[static_cast<std::size_t>(c)] = lu.solve(rhs)[0];
      } else {
        out[static_cast<std::size_t>(c)] =
            field.values[static_cast<std::size_t>(neighbors.front() * field.components + c)];
      }
    }
    return out;
  }
};

}  // namespace

double compare_fields(const FieldData& a, const FieldData& b, int probe_per_side) {
  if (a.components != b.components)
    throw IncomparableFields("fields have different component counts");
  if (probe_per_side < 2) throw FemError("probe grid must be at least 2x2");
  if (a.point_count() == 0 || b.point_count() == 0)
    throw IncomparableFields("empty field");

  Interpolator ia(a), ib(b);
  int total = probe_per_side * probe_per_side;
  int skipped = 0;
  double num = 0.0, den = 0.0;
  for (int j = 0; j < probe_per_side; ++j) {
    for (int i = 0; i < probe_per_side; ++i) {
      std::array<double, 2> p = {static_cast<double>(i) / (probe_per_side - 1),
                                 static_cast<double>(j) / (probe_per_side - 1)};
      if (!ia.covers(p) || !ib.covers(p)) {
        ++skipped;
        continue;
      }
      std::vector<double> va = ia.interpolate(p);
      std::vector<double> vb = ib.interpolate(p);
      for (int c = 0; c < a.components; ++c) {
        double d = va[static_cast<std::size_t>(c)] - vb[static_cast<std::size_t>(c)];
        num += d * d;
        den += vb[static_cast<std::size_t>(c)] * vb[static_cast<std::size_t>(c)];
      }
    }
  }
  if (skipped * 2 > total)
    throw IncomparableFields("more than half of the probe points are uncovered");
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace femagents::fem
