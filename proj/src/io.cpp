#include "paco/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "paco/error.hpp"

namespace paco::io {

using nlohmann::json;

namespace {

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

json parse(const std::string& text, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string(what) + ": " + e.what());
  }
  if (!j.is_object() || j.value("format_version", -1) != kFormatVersion)
    throw Error(ErrorCode::FormatError, std::string(what) + ": missing or unsupported format_version");
  return j;
}

template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, std::string(what) + ": " + e.what());
  }
}

json point_json(const Point3& p) { return json::array({p.x(), p.y(), p.z()}); }
Point3 point_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

void check_version_comment(const std::string& line, const std::string& path) {
  std::istringstream ss(line);
  std::string tag, key;
  int version = 0;
  ss >> tag >> key;
  if (key == "format_version" && (!(ss >> version) || version != kFormatVersion))
    throw Error(ErrorCode::FormatError, path + ": unsupported format_version");
}

std::string obj_text(const PolyMesh& mesh, bool triangles) {
  std::string out = "# format_version " + std::to_string(kFormatVersion) + "\n";
  for (const auto& v : mesh.vertices) out += "v " + num(v.x()) + " " + num(v.y()) + " " + num(v.z()) + "\n";
  auto face_line = [](const auto& idx) {
    std::string s = "f";
    for (int i : idx) s += " " + std::to_string(i + 1);
    return s + "\n";
  };
  if (triangles) {
    for (const auto& t : triangulate(mesh)) out += face_line(t);
    return out;
  }
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    if (f < mesh.face_planes.size()) {
      const auto& p = mesh.face_planes[f];
      out += "# plane " + num(p.n.x()) + " " + num(p.n.y()) + " " + num(p.n.z()) + " " + num(p.d) + "\n";
    }
    out += face_line(mesh.faces[f]);
  }
  return out;
}

CartesianPlaned fitted_plane(const PolyMesh& m, const std::vector<int>& face) {
  Point3 n = Point3::Zero(), c = Point3::Zero();
  for (std::size_t i = 0; i < face.size(); ++i) {
    const Point3& a = m.vertices[static_cast<std::size_t>(face[i])];
    n += a.cross(m.vertices[static_cast<std::size_t>(face[(i + 1) % face.size()])]);
    c += a;
  }
  CartesianPlaned p;
  if (n.norm() > 0) p.n = n.normalized();
  p.d = p.n.dot(c / static_cast<double>(face.size()));
  return p;
}

}  // namespace

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

// ---- PLY ------------------------------------------------------------------------

void write_ply(const std::string& path, const PointList& points, const std::vector<int>* labels) {
  if (labels && labels->size() != points.size())
    throw Error(ErrorCode::ShapeMismatch, "label count differs from point count");
  std::string out = "ply\nformat ascii 1.0\ncomment format_version " + std::to_string(kFormatVersion) +
                    "\nelement vertex " + std::to_string(points.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\n";
  if (labels) out += "property int label\n";
  out += "end_header\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out += num(points[i].x()) + " " + num(points[i].y()) + " " + num(points[i].z());
    if (labels) out += " " + std::to_string((*labels)[i]);
    out += "\n";
  }
  write_text(path, out);
}

Cloud read_ply(const std::string& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw Error(ErrorCode::FormatError, path + ": not a PLY file");
  long count = -1;
  std::vector<std::string> props;
  bool ascii = false;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string f;
      ls >> f;
      ascii = f == "ascii";
    } else if (kw == "comment") {
      check_version_comment(line, path);
    } else if (kw == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") throw Error(ErrorCode::FormatError, path + ": only vertex elements are supported");
    } else if (kw == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    }
  }
  if (line != "end_header" || !ascii || count < 0)
    throw Error(ErrorCode::FormatError, path + ": malformed or non-ASCII PLY header");
  if (props.size() < 3 || props[0] != "x" || props[1] != "y" || props[2] != "z")
    throw Error(ErrorCode::FormatError, path + ": expected x y z properties first");
  const bool has_label = props.size() > 3 && props[3] == "label";
  Cloud c;
  c.points.reserve(static_cast<std::size_t>(count));
  for (long i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw Error(ErrorCode::FormatError, path + ": truncated vertex list");
    std::istringstream ls(line);
    Point3 p;
    if (!(ls >> p.x() >> p.y() >> p.z())) throw Error(ErrorCode::FormatError, path + ": bad vertex line");
    c.points.push_back(p);
    if (has_label) {
      int l = 0;
      if (!(ls >> l)) throw Error(ErrorCode::FormatError, path + ": missing label");
      c.labels.push_back(l);
    }
  }
  return c;
}

// ---- OBJ ------------------------------------------------------------------------

void write_obj(const std::string& path, const PolyMesh& mesh) { write_text(path, obj_text(mesh, false)); }

void write_obj_triangles(const std::string& path, const PolyMesh& mesh) { write_text(path, obj_text(mesh, true)); }

PolyMesh read_obj(const std::string& path) {
  std::istringstream in(read_text(path));
  PolyMesh m;
  std::vector<std::optional<CartesianPlaned>> planes;
  std::optional<CartesianPlaned> pending;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "v") {
      Point3 p;
      if (!(ls >> p.x() >> p.y() >> p.z())) throw Error(ErrorCode::FormatError, path + ": bad vertex line");
      m.vertices.push_back(p);
    } else if (kw == "f") {
      std::vector<int> face;
      std::string tok;
      while (ls >> tok) {
        int idx = 0;
        try {
          idx = std::stoi(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          throw Error(ErrorCode::FormatError, path + ": bad face index '" + tok + "'");
        }
        const int v = idx > 0 ? idx - 1 : static_cast<int>(m.vertices.size()) + idx;
        if (v < 0 || v >= static_cast<int>(m.vertices.size()))
          throw Error(ErrorCode::FormatError, path + ": face index out of range");
        face.push_back(v);
      }
      if (face.size() < 3) throw Error(ErrorCode::FormatError, path + ": face with fewer than 3 vertices");
      m.faces.push_back(std::move(face));
      planes.push_back(pending);
      pending.reset();
    } else if (kw == "#") {
      std::string key;
      ls >> key;
      if (key == "format_version") {
        check_version_comment(line, path);
      } else if (key == "plane") {
        CartesianPlaned p;
        if (!(ls >> p.n.x() >> p.n.y() >> p.n.z() >> p.d)) throw Error(ErrorCode::FormatError, path + ": bad plane");
        pending = p;
      }
    }
  }
  for (std::size_t f = 0; f < m.faces.size(); ++f) m.face_planes.push_back(planes[f] ? *planes[f] : fitted_plane(m, m.faces[f]));
  return m;
}

// ---- JSON -----------------------------------------------------------------------

std::string primitives_to_json(const PrimitiveList& primitives, bool with_points) {
  json j;
  j["format_version"] = kFormatVersion;
  j["primitives"] = json::array();
  for (const auto& p : primitives) {
    json e{{"r", p.plane.r}, {"theta", p.plane.theta}, {"phi", p.plane.phi}, {"confidence", p.confidence}};
    if (with_points) {
      e["points"] = json::array();
      for (const auto& x : p.points) e["points"].push_back(point_json(x));
    }
    j["primitives"].push_back(std::move(e));
  }
  return j.dump(1);
}

PrimitiveList primitives_from_json(const std::string& text) {
  const json j = parse(text, "primitives");
  return guarded("primitives", [&] {
    PrimitiveList out;
    for (const auto& e : j.at("primitives")) {
      PlanePrimitive p;
      p.plane.r = e.at("r").get<double>();
      p.plane.theta = e.at("theta").get<double>();
      p.plane.phi = e.at("phi").get<double>();
      p.confidence = e.value("confidence", 1.0);
      if (e.contains("points"))
        for (const auto& x : e["points"]) p.points.push_back(point_from(x));
      out.push_back(std::move(p));
    }
    return out;
  });
}

std::string segmentation_to_json(const segment::Segmentation& seg) {
  json j;
  j["format_version"] = kFormatVersion;
  j["segments"] = json::array();
  for (const auto& s : seg.segments)
    j["segments"].push_back({{"normal", point_json(s.plane.n)}, {"d", s.plane.d}, {"members", s.members}});
  j["unassigned"] = seg.unassigned;
  return j.dump();
}

segment::Segmentation segmentation_from_json(const std::string& text) {
  const json j = parse(text, "segmentation");
  return guarded("segmentation", [&] {
    segment::Segmentation seg;
    for (const auto& e : j.at("segments")) {
      segment::Segment s;
      s.plane.n = point_from(e.at("normal"));
      s.plane.d = e.at("d").get<double>();
      s.members = e.at("members").get<std::vector<int>>();
      seg.segments.push_back(std::move(s));
    }
    seg.unassigned = j.at("unassigned").get<std::vector<int>>();
    return seg;
  });
}

std::string manifest_to_json(const Manifest& m) {
  json j;
  j["format_version"] = kFormatVersion;
  j["base_seed"] = m.base_seed;
  j["level"] = m.level;
  j["samples"] = json::array();
  for (const auto& e : m.entries)
    j["samples"].push_back({{"id", e.id},
                            {"seed", e.seed},
                            {"complexity", e.complexity},
                            {"view", e.view},
                            {"level", std::string(synth::to_string(e.level))}});
  return j.dump(1);
}

Manifest manifest_from_json(const std::string& text) {
  const json j = parse(text, "manifest");
  return guarded("manifest", [&] {
    Manifest m;
    m.base_seed = j.value("base_seed", std::uint64_t{0});
    m.level = j.value("level", std::string());
    for (const auto& e : j.at("samples")) {
      ManifestEntry x;
      x.id = e.at("id").get<std::string>();
      x.seed = e.at("seed").get<std::uint64_t>();
      x.complexity = e.at("complexity").get<int>();
      x.view = e.at("view").get<int>();
      try {
        x.level = synth::parse_level(e.at("level").get<std::string>());
      } catch (const Error& err) {
        throw Error(ErrorCode::FormatError, std::string("manifest: ") + err.what());
      }
      m.entries.push_back(std::move(x));
    }
    return m;
  });
}

void save_sample(const std::string& dir, const synth::Sample& s) {
  const std::filesystem::path d(dir);
  std::filesystem::create_directories(d);
  write_ply((d / "input.ply").string(), s.input_cloud);
  write_ply((d / "gt.ply").string(), s.gt_cloud, &s.gt_labels);
  write_obj((d / "gt_mesh.obj").string(), s.gt_mesh);
  write_text((d / "gt_primitives.json").string(), primitives_to_json(s.gt_primitives, false));
}

synth::Sample load_sample(const std::string& dir, const ManifestEntry& entry) {
  const std::filesystem::path d(dir);
  synth::Sample s;
  s.seed = entry.seed;
  s.complexity = entry.complexity;
  s.view = entry.view;
  s.level = entry.level;
  s.input_cloud = read_ply((d / "input.ply").string()).points;
  Cloud gt = read_ply((d / "gt.ply").string());
  s.gt_cloud = std::move(gt.points);
  s.gt_labels = std::move(gt.labels);
  s.gt_mesh = read_obj((d / "gt_mesh.obj").string());
  s.gt_primitives = primitives_from_json(read_text((d / "gt_primitives.json").string()));
  if (s.gt_labels.size() != s.gt_cloud.size()) throw Error(ErrorCode::FormatError, dir + ": gt.ply lacks labels");
  for (std::size_t i = 0; i < s.gt_cloud.size(); ++i) {
    const int l = s.gt_labels[i];
    if (l < 0 || l >= static_cast<int>(s.gt_primitives.size()))
      throw Error(ErrorCode::FormatError, dir + ": gt label out of range");
    s.gt_primitives[static_cast<std::size_t>(l)].points.push_back(s.gt_cloud[i]);
  }
  return s;
}

// ---- reports --------------------------------------------------------------------

std::string report_csv(const std::vector<metrics::Record>& records, const metrics::Summary& summary) {
  const double k = metrics::kReportScale;
  std::string out = "format_version,id,failed,failure,cd_x100,hd_x100,nc,nc_prim,faces,vertices,triangles,fr\n";
  const std::string v = std::to_string(kFormatVersion);
  for (const auto& r : records) {
    out += v + "," + r.id + "," + (r.failed ? "1" : "0") + "," + r.failure + "," + num(k * r.metrics.cd) + "," +
           num(k * r.metrics.hd) + "," + num(r.metrics.nc) + "," + num(r.nc_prim) + "," + std::to_string(r.faces) +
           "," + std::to_string(r.vertices) + "," + std::to_string(r.triangles) + "," + (r.failed ? "100" : "0") +
           "\n";
  }
  out += v + ",mean," + std::to_string(summary.failures) + ",," + num(k * summary.cd) + "," + num(k * summary.hd) +
         "," + num(summary.nc) + "," + num(summary.nc_prim) + "," + num(summary.faces) + ",," +
         num(summary.triangles) + "," + num(summary.fr) + "\n";
  return out;
}

std::string report_json(const std::vector<metrics::Record>& records, const metrics::Summary& summary) {
  const double k = metrics::kReportScale;
  json j;
  j["format_version"] = kFormatVersion;
  j["scale"] = k;
  j["summary"] = {{"count", summary.count},   {"failures", summary.failures}, {"fr", summary.fr},
                  {"cd", summary.cd},         {"hd", summary.hd},             {"cd_x100", k * summary.cd},
                  {"hd_x100", k * summary.hd}, {"nc", summary.nc},            {"nc_prim", summary.nc_prim},
                  {"faces", summary.faces},   {"triangles", summary.triangles}};
  j["samples"] = json::array();
  for (const auto& r : records)
    j["samples"].push_back({{"id", r.id},
                            {"failed", r.failed},
                            {"failure", r.failure},
                            {"cd", r.metrics.cd},
                            {"hd", r.metrics.hd},
                            {"cd_x100", k * r.metrics.cd},
                            {"hd_x100", k * r.metrics.hd},
                            {"nc", r.metrics.nc},
                            {"nc_prim", r.nc_prim},
                            {"faces", r.faces},
                            {"vertices", r.vertices},
                            {"triangles", r.triangles}});
  return j.dump(1);
}

}  // namespace paco::io
