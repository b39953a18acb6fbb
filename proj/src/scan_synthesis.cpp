#include "pdssl/scan_synthesis.hpp"

#include "pdssl/convex_hull.hpp"
#include "pdssl/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_set>

namespace pdssl {

std::vector<Viewpoint> viewpoint_set(double gamma) {
  if (!(gamma > 1.0)) throw Error("camera inside object");
  std::vector<Viewpoint> out;
  out.reserve(kViewpointCount);
  int index = 1;
  for (int x = -1; x <= 1; ++x)
    for (int y = -1; y <= 1; ++y)
      for (int z = -1; z <= 1; ++z) {
        if (x == 0 && y == 0 && z == 0) continue;
        Viewpoint vp;
        vp.index = index++;
        vp.direction = Vec3(x, y, z).normalized();
        vp.radius = gamma;
        vp.position = gamma * vp.direction;
        vp.theta_deg = std::acos(std::clamp(vp.direction.z(), -1.0, 1.0)) * 180.0 / std::numbers::pi;
        double phi = std::atan2(vp.direction.y(), vp.direction.x()) * 180.0 / std::numbers::pi;
        if (phi < 0.0) phi += 360.0;
        if (phi >= 360.0) phi -= 360.0;
        vp.phi_deg = phi;
        out.push_back(vp);
      }
  return out;
}

std::vector<std::size_t> hidden_point_removal(const PointCloud& cloud, const Vec3& camera,
                                              double r_factor) {
  if (cloud.size() < 4) throw Error("hidden_point_removal: need at least 4 points");
  if (!(r_factor > 1.0)) throw Error("hidden_point_removal: r_factor must exceed 1");
  const Vec3 c = cloud.centroid();
  double bound = 0.0;
  for (const auto& p : cloud.points) bound = std::max(bound, (p - c).norm());
  if (!((camera - c).norm() > bound)) throw Error("hidden_point_removal: camera inside bounding ball");

  const std::size_t n = cloud.size();
  std::vector<Vec3> local(n);
  double max_dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    local[i] = cloud[i] - camera;
    max_dist = std::max(max_dist, local[i].norm());
  }
  const double radius = r_factor * max_dist;

  // Spherical flip about the camera, plus the camera itself as the last point.
  auto flip = [&](const std::vector<Vec3>& pts) {
    std::vector<Vec3> flipped(n + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double d = pts[i].norm();
      flipped[i] = d > 0.0 ? Vec3(pts[i] + 2.0 * (radius - d) * pts[i] / d) : pts[i];
    }
    flipped[n] = Vec3::Zero();
    return flipped;
  };

  ConvexHull hull;
  try {
    hull = quickhull(flip(local));
  } catch (const Error&) {
    std::mt19937_64 rng(0x5eed);
    std::uniform_real_distribution<double> jitter(-1e-9, 1e-9);
    for (auto& p : local) p += Vec3(jitter(rng), jitter(rng), jitter(rng));
    hull = quickhull(flip(local));
  }

  std::vector<std::size_t> visible;
  visible.reserve(hull.vertices.size());
  for (auto v : hull.vertices)
    if (v < n) visible.push_back(v);
  return visible;
}

PartialScan make_partial_scan(const LabeledShape& shape, const Viewpoint& vp, std::size_t m,
                              std::uint64_t seed, double r_factor) {
  const auto visible = hidden_point_removal(shape.cloud, vp.position, r_factor);
  if (visible.empty()) throw Error("empty scan");
  PointCloud seen;
  seen.points.reserve(visible.size());
  for (auto i : visible) seen.points.push_back(shape.cloud[i]);
  return PartialScan{shape.id, vp.index, resample(seen, m, seed)};
}

double TriangleMesh::area() const {
  double total = 0.0;
  for (const auto& t : triangles)
    total += 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
  return total;
}

PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    for (auto v : t)
      if (v >= mesh.vertices.size()) throw Error("sample_surface: triangle index out of range");
    total += 0.5 * (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]).norm();
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw Error("sample_surface: mesh has zero area");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud out;
  out.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = unit(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    if (it == cumulative.end()) --it;
    const auto& t = mesh.triangles[static_cast<std::size_t>(it - cumulative.begin())];
    const double s = std::sqrt(unit(rng));
    const double u = unit(rng);
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    out.points.push_back((1.0 - s) * a + s * (1.0 - u) * b + s * u * c);
  }
  return out;
}

namespace {

class MeshBuilder {
 public:
  void add_box(const Vec3& center, const Vec3& half) {
    const std::size_t base = mesh_.vertices.size();
    for (int i = 0; i < 8; ++i)
      mesh_.vertices.push_back(center + Vec3((i & 1) ? half.x() : -half.x(), (i & 2) ? half.y() : -half.y(),
                                             (i & 4) ? half.z() : -half.z()));
    static constexpr std::array<std::array<int, 4>, 6> quads{
        {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4}, {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}}};
    for (const auto& q : quads) quad(base + q[0], base + q[1], base + q[2], base + q[3]);
  }

  /// Surface of revolution about the z axis through `center`: profile is a
  /// list of (radius, z) pairs from bottom to top; zero radius closes a pole.
  void add_revolution(const Vec3& center, const std::vector<std::pair<double, double>>& profile,
                      int segments, const Eigen::Matrix3d& frame = Eigen::Matrix3d::Identity()) {
    const std::size_t base = mesh_.vertices.size();
    for (const auto& [r, z] : profile)
      for (int s = 0; s < segments; ++s) {
        const double a = 2.0 * std::numbers::pi * s / segments;
        mesh_.vertices.push_back(center + frame * Vec3(r * std::cos(a), r * std::sin(a), z));
      }
    for (std::size_t ring = 0; ring + 1 < profile.size(); ++ring)
      for (int s = 0; s < segments; ++s) {
        const std::size_t s1 = static_cast<std::size_t>((s + 1) % segments);
        const std::size_t a = base + ring * segments + s, b = base + ring * segments + s1;
        const std::size_t c = base + (ring + 1) * segments + s1, d = base + (ring + 1) * segments + s;
        quad(a, b, c, d);
      }
  }

  void add_cylinder(const Vec3& center, double radius, double half_height, int segments,
                    const Eigen::Matrix3d& frame = Eigen::Matrix3d::Identity()) {
    add_revolution(center,
                   {{0.0, -half_height}, {radius, -half_height}, {radius, half_height}, {0.0, half_height}},
                   segments, frame);
  }

  void add_torus(const Vec3& center, double major, double minor, int segments, int tube) {
    const std::size_t base = mesh_.vertices.size();
    for (int i = 0; i < segments; ++i) {
      const double u = 2.0 * std::numbers::pi * i / segments;
      for (int j = 0; j < tube; ++j) {
        const double v = 2.0 * std::numbers::pi * j / tube;
        const double r = major + minor * std::cos(v);
        mesh_.vertices.push_back(center + Vec3(r * std::cos(u), r * std::sin(u), minor * std::sin(v)));
      }
    }
    auto id = [&](int i, int j) {
      return base + static_cast<std::size_t>((i % segments) * tube + (j % tube));
    };
    for (int i = 0; i < segments; ++i)
      for (int j = 0; j < tube; ++j) quad(id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
  }

  TriangleMesh take() { return std::move(mesh_); }

 private:
  void quad(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    mesh_.triangles.push_back({a, b, c});
    mesh_.triangles.push_back({a, c, d});
  }

  TriangleMesh mesh_;
};

void add_legs(MeshBuilder& mb, double half_w, double half_d, double height, double leg) {
  for (int sx : {-1, 1})
    for (int sy : {-1, 1})
      mb.add_box(Vec3(sx * (half_w - leg), sy * (half_d - leg), height / 2.0), Vec3(leg, leg, height / 2.0));
}

}  // namespace

const std::array<const char*, kShapeFamilyCount>& shape_family_names() {
  static const std::array<const char*, kShapeFamilyCount> names{
      "box", "table", "chair", "cylinder", "sphere", "cone", "torus", "cross_wing"};
  return names;
}

TriangleMesh make_family_mesh(int family, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uni = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  MeshBuilder mb;
  switch (family) {
    case 0:  // box
      mb.add_box(Vec3::Zero(), Vec3(uni(0.3, 1.0), uni(0.3, 1.0), uni(0.3, 1.0)));
      break;
    case 1: {  // table: slab on four legs
      const double hw = uni(0.8, 1.2), hd = uni(0.5, 1.0), h = uni(0.6, 1.0), t = uni(0.03, 0.06);
      const double leg = uni(0.03, 0.06);
      mb.add_box(Vec3(0, 0, h + t), Vec3(hw, hd, t));
      add_legs(mb, hw, hd, h, leg);
      break;
    }
    case 2: {  // chair: seat, back, four legs
      const double hw = uni(0.35, 0.5), hd = uni(0.35, 0.5), h = uni(0.4, 0.6), t = uni(0.03, 0.05);
      const double back = uni(0.5, 0.9), leg = uni(0.025, 0.045);
      mb.add_box(Vec3(0, 0, h + t), Vec3(hw, hd, t));
      mb.add_box(Vec3(0, -hd + t, h + 2 * t + back / 2.0), Vec3(hw, t, back / 2.0));
      add_legs(mb, hw, hd, h, leg);
      break;
    }
    case 3:  // cylinder
      mb.add_cylinder(Vec3::Zero(), uni(0.3, 0.6), uni(0.25, 0.75), 32);
      break;
    case 4: {  // sphere (mildly anisotropic)
      const Vec3 axes(uni(0.8, 1.2), uni(0.8, 1.2), uni(0.8, 1.2));
      std::vector<std::pair<double, double>> profile;
      const int stacks = 16;
      for (int k = 0; k <= stacks; ++k) {
        const double a = std::numbers::pi * k / stacks - std::numbers::pi / 2.0;
        profile.emplace_back(std::cos(a), std::sin(a));
      }
      profile.front().first = 0.0;
      profile.back().first = 0.0;
      mb.add_revolution(Vec3::Zero(), profile, 32, axes.asDiagonal());
      break;
    }
    case 5: {  // cone
      const double r = uni(0.3, 0.7), h = uni(0.6, 1.5);
      mb.add_revolution(Vec3::Zero(), {{0.0, 0.0}, {r, 0.0}, {0.0, h}}, 32);
      break;
    }
    case 6:  // torus
      mb.add_torus(Vec3::Zero(), uni(0.6, 1.0), uni(0.1, 0.35), 48, 16);
      break;
    case 7: {  // cross-wing: fuselage, main wing, tailplane, fin
      const double len = uni(0.75, 1.0), rad = uni(0.08, 0.15);
      const double span = uni(0.6, 1.0), chord = uni(0.1, 0.2), pos = uni(-0.1, 0.2);
      Eigen::Matrix3d along_x;
      along_x << 0, 0, 1, 0, 1, 0, -1, 0, 0;
      mb.add_cylinder(Vec3::Zero(), rad, len, 24, along_x);
      mb.add_box(Vec3(pos, 0, 0), Vec3(chord, span, 0.02));
      mb.add_box(Vec3(-len + 0.1, 0, 0), Vec3(0.07, span * 0.35, 0.015));
      mb.add_box(Vec3(-len + 0.1, 0, rad + 0.12), Vec3(0.07, 0.015, 0.12));
      break;
    }
    default:
      throw Error("unknown shape family " + std::to_string(family));
  }
  return mb.take();
}

std::vector<LabeledShape> generate_procedural_dataset(std::uint64_t seed, std::size_t n_per_class,
                                                      std::size_t dense_points) {
  if (n_per_class < 2) throw Error("generate_procedural_dataset: n_per_class must be at least 2");
  const std::size_t n_train = std::max<std::size_t>(1, n_per_class * 4 / 5);
  const auto& names = shape_family_names();

  std::vector<LabeledShape> shapes(kShapeFamilyCount * n_per_class);
  parallel_for(shapes.size(), [&](std::size_t k) {
    const int family = static_cast<int>(k / n_per_class);
    const std::size_t member = k % n_per_class;
    const std::uint64_t shape_seed = mix_seed(mix_seed(seed, static_cast<std::uint64_t>(family)), member);
    const TriangleMesh mesh = make_family_mesh(family, shape_seed);
    LabeledShape& s = shapes[k];
    char id[64];
    std::snprintf(id, sizeof id, "%s_%03zu", names[static_cast<std::size_t>(family)], member);
    s.id = id;
    s.class_label = family;
    s.split = member < n_train ? Split::train : Split::test;
    s.cloud = quantize_to_float(normalize_unit_sphere(sample_surface(mesh, dense_points, mix_seed(shape_seed, 1))));
  });
  return shapes;
}

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw Error(path.string() + ": line " + std::to_string(line) + ": " + what);
}

// Line reader that skips blank lines and '#' comments, tracking line numbers.
class LineReader {
 public:
  explicit LineReader(const std::filesystem::path& path) : path_(path), in_(path) {
    if (!in_) throw Error("cannot open " + path.string());
  }
  bool next(std::string& out) {
    while (std::getline(in_, out)) {
      ++line_;
      if (const auto hash = out.find('#'); hash != std::string::npos) out.erase(hash);
      if (out.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  }
  std::string require(const char* what) {
    std::string s;
    if (!next(s)) parse_fail(path_, line_ + 1, std::string("unexpected end of file, expected ") + what);
    return s;
  }
  std::size_t line() const { return line_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_ = 0;
};

std::vector<double> parse_numbers(const LineReader& r, const std::string& text) {
  std::istringstream ss(text);
  std::vector<double> v;
  std::string tok;
  while (ss >> tok) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      parse_fail(r.path(), r.line(), "not a number: '" + tok + "'");
    }
  }
  return v;
}

std::size_t as_index(const LineReader& r, double v, std::size_t limit) {
  if (v < 0 || v != std::floor(v) || v >= static_cast<double>(limit))
    parse_fail(r.path(), r.line(), "vertex index out of range");
  return static_cast<std::size_t>(v);
}

void add_polygon(TriangleMesh& mesh, const LineReader& r, const std::vector<double>& nums, std::size_t first) {
  const double declared = nums[first - 1];
  if (declared < 3 || declared != std::floor(declared)) parse_fail(r.path(), r.line(), "face needs at least 3 vertices");
  const auto k = static_cast<std::size_t>(declared);
  if (nums.size() < first + k) parse_fail(r.path(), r.line(), "truncated face: expected " + std::to_string(k) + " indices");
  const std::size_t v0 = as_index(r, nums[first], mesh.vertices.size());
  for (std::size_t i = 1; i + 1 < k; ++i)
    mesh.triangles.push_back({v0, as_index(r, nums[first + i], mesh.vertices.size()),
                              as_index(r, nums[first + i + 1], mesh.vertices.size())});
}

PointCloud mesh_or_points(TriangleMesh mesh, std::size_t samples, std::uint64_t seed) {
  if (mesh.triangles.empty()) return PointCloud(std::move(mesh.vertices));
  return sample_surface(mesh, samples, seed);
}

PointCloud load_off(const std::filesystem::path& path, std::size_t samples, std::uint64_t seed) {
  LineReader r(path);
  std::string line = r.require("OFF header");
  std::istringstream head(line);
  std::string magic;
  head >> magic;
  if (magic != "OFF") parse_fail(path, r.line(), "missing OFF header");
  std::string rest;
  std::getline(head, rest);
  if (rest.find_first_not_of(" \t\r") == std::string::npos) rest = r.require("element counts");
  const auto counts = parse_numbers(r, rest);
  if (counts.size() < 2) parse_fail(path, r.line(), "expected vertex and face counts");
  const auto nv = static_cast<std::size_t>(counts[0]);
  const auto nf = static_cast<std::size_t>(counts[1]);

  TriangleMesh mesh;
  for (std::size_t i = 0; i < nv; ++i) {
    const auto v = parse_numbers(r, r.require("vertex"));
    if (v.size() < 3) parse_fail(path, r.line(), "vertex needs 3 coordinates");
    mesh.vertices.emplace_back(v[0], v[1], v[2]);
  }
  for (std::size_t i = 0; i < nf; ++i) {
    const auto f = parse_numbers(r, r.require("face"));
    if (f.empty()) parse_fail(path, r.line(), "empty face line");
    add_polygon(mesh, r, f, 1);
  }
  return mesh_or_points(std::move(mesh), samples, seed);
}

PointCloud load_ply(const std::filesystem::path& path, std::size_t samples, std::uint64_t seed) {
  LineReader r(path);
  if (r.require("ply magic").rfind("ply", 0) != 0) parse_fail(path, r.line(), "missing ply magic");

  std::size_t nv = 0, nf = 0;
  std::vector<std::string> vertex_props;
  std::string current;
  for (;;) {
    std::istringstream ss(r.require("header line"));
    std::string kw;
    ss >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "ascii") parse_fail(path, r.line(), "only ascii ply is supported");
    } else if (kw == "element") {
      std::size_t count = 0;
      ss >> current >> count;
      if (current == "vertex") nv = count;
      if (current == "face") nf = count;
    } else if (kw == "property" && current == "vertex") {
      std::string type, name;
      ss >> type >> name;
      vertex_props.push_back(name);
    }
  }
  auto find_prop = [&](const char* name) {
    const auto it = std::find(vertex_props.begin(), vertex_props.end(), name);
    if (it == vertex_props.end()) parse_fail(path, r.line(), std::string("vertex property '") + name + "' missing");
    return static_cast<std::size_t>(it - vertex_props.begin());
  };
  const std::size_t ix = find_prop("x"), iy = find_prop("y"), iz = find_prop("z");

  TriangleMesh mesh;
  for (std::size_t i = 0; i < nv; ++i) {
    const auto v = parse_numbers(r, r.require("vertex"));
    if (v.size() < vertex_props.size()) parse_fail(path, r.line(), "vertex has too few properties");
    mesh.vertices.emplace_back(v[ix], v[iy], v[iz]);
  }
  for (std::size_t i = 0; i < nf; ++i) {
    const auto f = parse_numbers(r, r.require("face"));
    if (f.empty()) parse_fail(path, r.line(), "empty face line");
    add_polygon(mesh, r, f, 1);
  }
  return mesh_or_points(std::move(mesh), samples, seed);
}

PointCloud load_xyz(const std::filesystem::path& path) {
  LineReader r(path);
  PointCloud out;
  std::string line;
  while (r.next(line)) {
    const auto v = parse_numbers(r, line);
    if (v.size() < 3) parse_fail(path, r.line(), "expected at least 3 coordinates");
    out.points.emplace_back(v[0], v[1], v[2]);
  }
  if (out.empty()) throw Error(path.string() + ": no points");
  return out;
}

}  // namespace

PointCloud load_shape_file(const std::filesystem::path& path, std::size_t mesh_samples, std::uint64_t seed) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  PointCloud cloud;
  if (ext == ".off")
    cloud = load_off(path, mesh_samples, seed);
  else if (ext == ".ply")
    cloud = load_ply(path, mesh_samples, seed);
  else if (ext == ".xyz")
    cloud = load_xyz(path);
  else
    throw Error("unsupported shape file extension '" + ext + "'");
  if (!cloud.finite()) throw Error(path.string() + ": non-finite coordinate");
  return cloud;
}

std::uint64_t scan_seed(std::uint64_t corpus_seed, std::size_t shape_index, int viewpoint_index) {
  return mix_seed(mix_seed(corpus_seed ^ 0xA5A5A5A5ULL, shape_index), static_cast<std::uint64_t>(viewpoint_index));
}

Corpus synthesize_corpus(const SynthConfig& config) {
  Corpus corpus;
  corpus.gamma = config.gamma;
  corpus.shapes = generate_procedural_dataset(config.seed, config.n_per_class, config.dense_points);
  const auto views = viewpoint_set(config.gamma);
  corpus.scans.resize(corpus.shapes.size() * views.size());
  parallel_for(corpus.shapes.size(), [&](std::size_t s) {
    for (std::size_t v = 0; v < views.size(); ++v) {
      PartialScan scan = make_partial_scan(corpus.shapes[s], views[v], config.points_per_scan,
                                           scan_seed(config.seed, s, views[v].index), config.hpr_r_factor);
      scan.cloud = quantize_to_float(scan.cloud);
      corpus.scans[s * views.size() + v] = std::move(scan);
    }
  });
  return corpus;
}

}  // namespace pdssl
