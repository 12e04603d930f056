#pragma once

#include <array>
#include <bit>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stmixer/dataset.hpp"
#include "stmixer/errors.hpp"
#include "stmixer/labels.hpp"
#include "stmixer/volume.hpp"

namespace stmixer {

inline void write_raw_volume(const std::filesystem::path& path, const Volume3D& v) {
  static_assert(std::endian::native == std::endian::little,
                "raw volume writer assumes a little-endian host");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write volume: " + path.string());
  os.write(reinterpret_cast<const char*>(v.voxels.data()),
           static_cast<std::streamsize>(v.voxels.size() * sizeof(float)));
  if (!os) throw DataError("failed writing volume: " + path.string());
}

inline Volume3D read_raw_volume(const std::filesystem::path& path, int nz, int ny, int nx,
                                std::array<double, 3> spacing) {
  Volume3D v(nz, ny, nx, spacing);
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  const auto expected = v.voxels.size() * sizeof(float);
  if (ec) throw DataError("missing volume file: " + path.string());
  if (actual != expected) {
    throw DataError("volume " + path.string() + " holds " + std::to_string(actual) +
                    " bytes, expected " + std::to_string(expected));
  }
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open volume: " + path.string());
  is.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(expected));
  if (!is) throw DataError("failed reading volume: " + path.string());
  return v;
}

// Writes `manifest.json` plus one raw little-endian float32 file per volume,
// named `<id>_t0.raw` / `<id>_t1.raw`.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create dataset directory: " + dir.string());
  nlohmann::json cases = nlohmann::json::array();
  for (const LabeledCase& c : ds.cases) {
    const Volume3D& v1 = c.roi_t1;
    nlohmann::json rec{
        {"id", c.id},
        {"split", to_string(c.split)},
        {"label", static_cast<int>(c.label)},
        {"texture", to_string(c.texture)},
        {"dims", {v1.nz, v1.ny, v1.nx}},
        {"spacing", {v1.spacing[0], v1.spacing[1], v1.spacing[2]}},
        {"roi_t1", c.id + "_t1.raw"},
        {"diam_t1_mm", c.diam_t1_mm},
    };
    write_raw_volume(dir / (c.id + "_t1.raw"), v1);
    if (c.roi_t0) {
      rec["roi_t0"] = c.id + "_t0.raw";
      write_raw_volume(dir / (c.id + "_t0.raw"), *c.roi_t0);
    } else {
      rec["roi_t0"] = nullptr;
    }
    if (c.diam_t0_mm) {
      rec["diam_t0_mm"] = *c.diam_t0_mm;
    } else {
      rec["diam_t0_mm"] = nullptr;
    }
    cases.push_back(std::move(rec));
  }
  const nlohmann::json manifest{{"version", 1}, {"cases", std::move(cases)}};
  std::ofstream os(dir / "manifest.json", std::ios::binary);
  if (!os) throw DataError("cannot write manifest: " + (dir / "manifest.json").string());
  os << manifest.dump(2) << '\n';
  if (!os) throw DataError("failed writing manifest: " + (dir / "manifest.json").string());
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const std::filesystem::path manifest_path = dir / "manifest.json";
  std::ifstream is(manifest_path, std::ios::binary);
  if (!is) throw DataError("cannot open manifest: " + manifest_path.string());
  nlohmann::json manifest;
  try {
    is >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  try {
    if (manifest.at("version").get<int>() != 1) {
      throw DataError("unsupported manifest version in " + manifest_path.string());
    }
    for (const nlohmann::json& rec : manifest.at("cases")) {
      LabeledCase c;
      c.id = rec.at("id").get<std::string>();
      c.split = split_from_string(rec.at("split").get<std::string>());
      c.label = evolution_from_code(rec.at("label").get<int>());
      c.texture = texture_from_string(rec.at("texture").get<std::string>());
      const auto& dims = rec.at("dims");
      const auto& sp = rec.at("spacing");
      const std::array<double, 3> spacing{sp.at(0).get<double>(), sp.at(1).get<double>(),
                                          sp.at(2).get<double>()};
      c.roi_t1 = read_raw_volume(dir / rec.at("roi_t1").get<std::string>(),
                                 dims.at(0).get<int>(), dims.at(1).get<int>(),
                                 dims.at(2).get<int>(), spacing);
      if (!rec.at("roi_t0").is_null()) {
        c.roi_t0 = read_raw_volume(dir / rec.at("roi_t0").get<std::string>(),
                                   dims.at(0).get<int>(), dims.at(1).get<int>(),
                                   dims.at(2).get<int>(), spacing);
      }
      if (!rec.at("diam_t0_mm").is_null()) c.diam_t0_mm = rec.at("diam_t0_mm").get<double>();
      c.diam_t1_mm = rec.at("diam_t1_mm").get<double>();
      ds.cases.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  return ds;
}

}  // namespace stmixer
