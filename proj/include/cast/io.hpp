#ifndef CAST_IO_HPP
#define CAST_IO_HPP

// JSON encodings of libraries, measurement sets and trajectories.
//
//   library:      {"K", "N", "length_scale", "models": [K][N][3]}
//   measurements: {"T", "N", "y": [T][N][3], "weights"?: [T][N], "valid"?: [T][N]}
//   trajectory:   [{"R": [9, column-major], "p", "v", "omega": [9]}, ...]

#include "cast/core.hpp"

#include "json.hpp"

#include <fstream>
#include <string>

namespace cast {

using Json = nlohmann::json;

inline Json vec_to_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Vec3 vec_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgumentError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Json mat_to_json(const Mat3& m) {
  Json j = Json::array();
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) j.push_back(m(r, c));
  return j;
}

inline Mat3 mat_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 9) throw InvalidArgumentError("expected 9 matrix entries");
  Mat3 m;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 3; ++r) m(r, c) = j[static_cast<std::size_t>(3 * c + r)].get<double>();
  return m;
}

inline Json library_to_json(const ShapeLibrary& lib) {
  Json models = Json::array();
  for (int k = 0; k < lib.num_models(); ++k) {
    Json pts = Json::array();
    for (int i = 0; i < lib.num_keypoints(); ++i) pts.push_back(vec_to_json(lib.keypoint(k, i)));
    models.push_back(pts);
  }
  return {{"K", lib.num_models()}, {"N", lib.num_keypoints()}, {"length_scale", lib.length_scale()},
          {"models", models}};
}

inline ShapeLibrary library_from_json(const Json& j) {
  std::vector<std::vector<Vec3>> models;
  for (const auto& m : j.at("models")) {
    std::vector<Vec3> pts;
    for (const auto& p : m) pts.push_back(vec_from_json(p));
    models.push_back(std::move(pts));
  }
  ShapeLibrary lib = ShapeLibrary::from_models(models, j.at("length_scale").get<double>());
  if (j.contains("K")) require_dims(j["K"].get<int>() == lib.num_models(), "library K");
  if (j.contains("N")) require_dims(j["N"].get<int>() == lib.num_keypoints(), "library N");
  return lib;
}

inline Json measurements_to_json(const MeasurementSet& meas) {
  Json y = Json::array();
  Json w = Json::array();
  Json valid = Json::array();
  for (int t = 0; t < meas.horizon(); ++t) {
    Json yr = Json::array();
    Json wr = Json::array();
    Json vr = Json::array();
    for (int i = 0; i < meas.keypoints(); ++i) {
      yr.push_back(vec_to_json(meas.y(t, i)));
      wr.push_back(meas.weight(t, i));
      vr.push_back(meas.valid(t, i));
    }
    y.push_back(yr);
    w.push_back(wr);
    valid.push_back(vr);
  }
  return {{"T", meas.horizon()}, {"N", meas.keypoints()}, {"y", y}, {"weights", w}, {"valid", valid}};
}

inline MeasurementSet measurements_from_json(const Json& j) {
  const int horizon = j.at("T").get<int>();
  const int n = j.at("N").get<int>();
  MeasurementSet meas(horizon, n);
  const Json& y = j.at("y");
  require_dims(y.size() == static_cast<std::size_t>(horizon), "measurement rows vs T");
  for (int t = 0; t < horizon; ++t) {
    require_dims(y[static_cast<std::size_t>(t)].size() == static_cast<std::size_t>(n), "measurement columns vs N");
    for (int i = 0; i < n; ++i) {
      const auto ts = static_cast<std::size_t>(t);
      const auto is = static_cast<std::size_t>(i);
      meas.y(t, i) = vec_from_json(y[ts][is]);
      if (j.contains("weights")) meas.set_weight(t, i, j["weights"].at(ts).at(is).get<double>());
      if (j.contains("valid")) meas.set_valid(t, i, j["valid"].at(ts).at(is).get<bool>());
    }
  }
  return meas;
}

inline Json trajectory_to_json(const Trajectory& traj) {
  Json out = Json::array();
  for (const auto& s : traj) {
    out.push_back({{"R", mat_to_json(s.rotation.matrix())},
                   {"p", vec_to_json(s.position)},
                   {"v", vec_to_json(s.velocity)},
                   {"omega", mat_to_json(s.rotation_rate.matrix())}});
  }
  return out;
}

inline Trajectory trajectory_from_json(const Json& j) {
  Trajectory traj;
  for (const auto& s : j) {
    traj.push_back(ObjectState::make(Rotation(mat_from_json(s.at("R")), 1e-6), vec_from_json(s.at("p")),
                                     vec_from_json(s.at("v")), Rotation(mat_from_json(s.at("omega")), 1e-6)));
  }
  return traj;
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(path + ": " + e.what());
  }
}

inline void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("write failed for " + path);
}

}  // namespace cast

#endif  // CAST_IO_HPP
