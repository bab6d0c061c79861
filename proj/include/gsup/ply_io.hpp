// Binary little-endian PLY serialization of Gaussian scenes.
//
// Layout (one float32 vertex element per primitive):
//   x y z opacity rot_0..rot_3 scale_0..scale_2 f_dc_0..f_dc_2 [f_rest_0..8]
// Opacity and scales are stored raw (not logit/log encoded). The SH degree is
// carried in a "comment sh_degree <d>" header line; degree 1 adds the nine
// f_rest properties, channel-major (f_rest_{ch*3 + band-1}).
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gsup/gaussian.hpp"

namespace gsup {

inline void save_ply(const GaussianScene& scene, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);

  std::vector<std::string> props = {"x",       "y",       "z",       "opacity",
                                    "rot_0",   "rot_1",   "rot_2",   "rot_3",
                                    "scale_0", "scale_1", "scale_2", "f_dc_0",
                                    "f_dc_1",  "f_dc_2"};
  if (scene.sh_degree >= 1)
    for (int i = 0; i < 9; ++i) props.push_back("f_rest_" + std::to_string(i));

  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n";
  header << "comment sh_degree " << scene.sh_degree << "\n";
  header << "element vertex " << scene.prims.size() << "\n";
  for (const std::string& p : props) header << "property float " << p << "\n";
  header << "end_header\n";
  out << header.str();

  std::vector<float> row(props.size());
  for (const GaussianPrimitive& p : scene.prims) {
    std::size_t j = 0;
    row[j++] = p.mu.x; row[j++] = p.mu.y; row[j++] = p.mu.z;
    row[j++] = p.alpha;
    row[j++] = p.rot.w; row[j++] = p.rot.x; row[j++] = p.rot.y; row[j++] = p.rot.z;
    row[j++] = p.scale.x; row[j++] = p.scale.y; row[j++] = p.scale.z;
    row[j++] = p.sh[0]; row[j++] = p.sh[4]; row[j++] = p.sh[8];
    if (scene.sh_degree >= 1)
      for (int ch = 0; ch < 3; ++ch)
        for (int b = 1; b <= 3; ++b) row[j++] = p.sh[ch * 4 + b];
    out.write(reinterpret_cast<const char*>(row.data()),
              std::streamsize(row.size() * sizeof(float)));
  }
  if (!out) throw Error("write failed: " + path);
}

inline GaussianScene load_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open: " + path);

  std::string line;
  if (!std::getline(in, line) || line != "ply")
    throw Error(path + ": not a PLY file (missing 'ply' magic)");

  int sh_degree = 1;
  std::size_t count = 0;
  std::vector<std::string> props;
  bool fmt_ok = false, in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string f, v;
      ls >> f >> v;
      if (f != "binary_little_endian")
        throw Error(path + ": unsupported PLY format '" + f + "'");
      fmt_ok = true;
    } else if (tok == "comment") {
      std::string key;
      ls >> key;
      if (key == "sh_degree") ls >> sh_degree;
    } else if (tok == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex")
        throw Error(path + ": unsupported element '" + name + "'");
      in_vertex = true;
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      if (!in_vertex) throw Error(path + ": property outside vertex element");
      if (type != "float")
        throw Error(path + ": property '" + name + "' must be float");
      props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!fmt_ok) throw Error(path + ": missing format line");

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < props.size(); ++i) index[props[i]] = int(i);
  auto require = [&](const std::string& name) {
    auto it = index.find(name);
    if (it == index.end())
      throw Error(path + ": missing required property '" + name + "'");
    return it->second;
  };

  const int ix = require("x"), iy = require("y"), iz = require("z");
  const int io = require("opacity");
  const int ir[4] = {require("rot_0"), require("rot_1"), require("rot_2"),
                     require("rot_3")};
  const int is[3] = {require("scale_0"), require("scale_1"), require("scale_2")};
  const int idc[3] = {require("f_dc_0"), require("f_dc_1"), require("f_dc_2")};
  int irest[9] = {0};
  if (sh_degree >= 1)
    for (int i = 0; i < 9; ++i) irest[i] = require("f_rest_" + std::to_string(i));

  GaussianScene scene;
  scene.sh_degree = sh_degree;
  scene.prims.resize(count);
  std::vector<float> row(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(row.data()),
            std::streamsize(row.size() * sizeof(float)));
    if (!in)
      throw Error(path + ": truncated payload at record " + std::to_string(i));
    GaussianPrimitive& p = scene.prims[i];
    p.mu = {row[ix], row[iy], row[iz]};
    p.alpha = row[io];
    p.rot = {row[ir[0]], row[ir[1]], row[ir[2]], row[ir[3]]};
    p.scale = {row[is[0]], row[is[1]], row[is[2]]};
    for (int ch = 0; ch < 3; ++ch) p.sh[ch * 4] = row[idc[ch]];
    if (sh_degree >= 1)
      for (int ch = 0; ch < 3; ++ch)
        for (int b = 1; b <= 3; ++b) p.sh[ch * 4 + b] = row[irest[ch * 3 + b - 1]];
  }
  validate_scene(scene);
  return scene;
}

}  // namespace gsup
