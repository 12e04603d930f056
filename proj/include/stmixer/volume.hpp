#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

namespace stmixer {

// Dense 3D scalar volume, z-major layout: index (iz * ny + iy) * nx + ix.
// Spacing is millimetres per voxel along (z, y, x).
struct Volume3D {
  int nz = 0, ny = 0, nx = 0;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> voxels;

  Volume3D() = default;
  Volume3D(int z, int y, int x, std::array<double, 3> sp = {1.0, 1.0, 1.0})
      : nz(z), ny(y), nx(x), spacing(sp) {
    if (z <= 0 || y <= 0 || x <= 0) {
      throw std::invalid_argument("Volume3D: non-positive dims " + std::to_string(z) + "x" +
                                  std::to_string(y) + "x" + std::to_string(x));
    }
    if (sp[0] <= 0 || sp[1] <= 0 || sp[2] <= 0) {
      throw std::invalid_argument("Volume3D: non-positive spacing");
    }
    voxels.assign(static_cast<size_t>(z) * y * x, 0.0f);
  }

  size_t numel() const { return voxels.size(); }

  float& at(int iz, int iy, int ix) {
    return voxels[(static_cast<size_t>(iz) * ny + iy) * nx + ix];
  }
  float at(int iz, int iy, int ix) const {
    return voxels[(static_cast<size_t>(iz) * ny + iy) * nx + ix];
  }

  bool in_bounds(int iz, int iy, int ix) const {
    return iz >= 0 && iz < nz && iy >= 0 && iy < ny && ix >= 0 && ix < nx;
  }
};

}  // namespace stmixer
