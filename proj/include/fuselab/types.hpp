#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace fuselab {

enum class ObjectClass { Car = 0, Pedestrian = 1, Cyclist = 2 };
inline constexpr int kNumClasses = 3;

std::string_view class_name(ObjectClass c);
ObjectClass class_from_name(std::string_view name);

// Pixel box, [x_min, y_min, x_max, y_max].
struct Box {
  float x_min = 0, y_min = 0, x_max = 0, y_max = 0;

  float width() const { return x_max - x_min; }
  float height() const { return y_max - y_min; }
  float area() const { return width() * height(); }
  float center_x() const { return 0.5f * (x_min + x_max); }
  float center_y() const { return 0.5f * (y_min + y_max); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  bool contains(float x, float y) const { return x >= x_min && x <= x_max && y >= y_min && y <= y_max; }
  bool operator==(const Box &) const = default;
};

struct GroundTruth {
  Box box;
  ObjectClass cls = ObjectClass::Car;
  bool operator==(const GroundTruth &) const = default;
};

struct Detection {
  Box box;
  ObjectClass cls = ObjectClass::Car;
  float score = 0;
};

// Camera-frame point, meters: +x right, +y down, +z forward.
struct Vec3 {
  float x = 0, y = 0, z = 0;
  bool operator==(const Vec3 &) const = default;
};
using PointCloud = std::vector<Vec3>;

struct CameraIntrinsics {
  float fx = 120, fy = 120;
  float cx = 64, cy = 48;
  int width = 128, height = 96;

  void validate() const;
  float project_u(const Vec3 &p) const { return fx * p.x / p.z + cx; }
  float project_v(const Vec3 &p) const { return fy * p.y / p.z + cy; }
  bool operator==(const CameraIntrinsics &) const = default;
};

} // namespace fuselab
