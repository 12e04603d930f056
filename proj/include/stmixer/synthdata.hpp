#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "stmixer/dataprep.hpp"
#include "stmixer/dataset.hpp"
#include "stmixer/rng.hpp"
#include "stmixer/volume.hpp"

namespace stmixer {

struct SynthConfig {
  int roi_size = 32;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel (z, y, x)
  // Nodule size at the earlier scan; diameters are 2x these radii.
  double radius_lo_mm = 3.0;
  double radius_hi_mm = 8.0;
  // Diameter change per class, drawn uniformly. Growth/shrink ranges must sit
  // strictly outside the labeling threshold, the stability range strictly
  // inside, so drawn classes are geometrically realizable.
  std::array<double, 2> dilatation_delta_mm{2.0, 4.0};
  std::array<double, 2> shrinkage_delta_mm{2.0, 4.0};  // magnitude of the decrease
  std::array<double, 2> stability_delta_mm{0.0, 1.0};  // magnitude, random sign
  double label_threshold_mm = 1.5;
  // Class priors by label code (stability, dilatation, shrinkage).
  std::array<double, 3> class_priors{0.92, 0.06, 0.02};
  double missing_t0_prob = 0.3;
  double noise_std = 0.1;
  double background_level = 0.1;
  std::array<double, 2> contrast_range{0.5, 0.9};
  double edge_softness = 0.08;  // sigmoid falloff width, in normalized-radius units
  double center_jitter_voxels = 2.0;
  int max_render_attempts = 64;

  void validate() const {
    if (roi_size <= 0) throw std::invalid_argument("synth config: roi_size must be positive");
    for (double s : spacing) {
      if (!(s > 0)) throw std::invalid_argument("synth config: non-positive spacing");
    }
    if (!(radius_lo_mm > 0) || radius_hi_mm < radius_lo_mm) {
      throw std::invalid_argument("synth config: bad radius range");
    }
    if (dilatation_delta_mm[0] <= label_threshold_mm ||
        dilatation_delta_mm[1] < dilatation_delta_mm[0]) {
      throw std::invalid_argument(
          "synth config: dilatation deltas must sit strictly above the labeling threshold");
    }
    if (shrinkage_delta_mm[0] <= label_threshold_mm ||
        shrinkage_delta_mm[1] < shrinkage_delta_mm[0]) {
      throw std::invalid_argument(
          "synth config: shrinkage deltas must sit strictly above the labeling threshold");
    }
    if (stability_delta_mm[0] < 0 || stability_delta_mm[1] >= label_threshold_mm ||
        stability_delta_mm[1] < stability_delta_mm[0]) {
      throw std::invalid_argument(
          "synth config: stability deltas must sit strictly inside the labeling threshold");
    }
    if (2.0 * radius_lo_mm - shrinkage_delta_mm[1] < 1.0) {
      throw std::invalid_argument("synth config: shrinkage can collapse the nodule");
    }
    double prior_sum = 0;
    for (double p : class_priors) {
      if (p < 0) throw std::invalid_argument("synth config: negative class prior");
      prior_sum += p;
    }
    if (std::abs(prior_sum - 1.0) > 1e-9) {
      throw std::invalid_argument("synth config: class priors must sum to 1");
    }
    if (missing_t0_prob < 0 || missing_t0_prob > 1) {
      throw std::invalid_argument("synth config: missing_t0_prob outside [0,1]");
    }
    if (noise_std < 0) throw std::invalid_argument("synth config: negative noise_std");
    if (!(edge_softness > 0)) throw std::invalid_argument("synth config: edge_softness <= 0");
    if (contrast_range[1] < contrast_range[0] || contrast_range[0] <= 0) {
      throw std::invalid_argument("synth config: bad contrast range");
    }
    if (max_render_attempts < 1) {
      throw std::invalid_argument("synth config: max_render_attempts < 1");
    }
    // The largest nodule (max radius, max growth, max jitter) must fit.
    const double max_radius = radius_hi_mm + dilatation_delta_mm[1] / 2.0;
    const double min_spacing = std::min({spacing[0], spacing[1], spacing[2]});
    const double half_extent = roi_size * min_spacing / 2.0;
    if (max_radius * 1.3 + center_jitter_voxels * min_spacing + 1.0 > half_extent) {
      throw std::invalid_argument("synth config: nodules may not fit inside the ROI");
    }
  }
};

// Preset for end-to-end training checks: flatter priors, moderate noise, and
// few missing prior scans so both heads see enough signal.
inline SynthConfig acceptance_synth_config() {
  SynthConfig cfg;
  cfg.class_priors = {0.80, 0.12, 0.08};
  cfg.noise_std = 0.1;
  cfg.missing_t0_prob = 0.05;
  return cfg;
}

// Equal priors for quick sanity runs where every class must show up.
inline SynthConfig balanced_synth_config() {
  SynthConfig cfg;
  cfg.class_priors = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  cfg.missing_t0_prob = 0.2;
  cfg.noise_std = 0.05;
  return cfg;
}

struct SynthCase {
  LabeledCase labeled;
  std::optional<Volume3D> mask_t0;
  Volume3D mask_t1;
};

// Case-index split by hash, 70/15/15; independent of the dataset seed so the
// assignment is a pure function of the index.
inline Split split_for_index(uint64_t index) {
  uint64_t state = index ^ 0x517cc1b727220a95ULL;
  const uint64_t h = splitmix64(state);
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < 0.70) return Split::train;
  if (u < 0.85) return Split::val;
  return Split::test;
}

namespace detail {

struct EllipsoidGeometry {
  std::array<double, 3> center_mm;   // relative to the ROI center
  std::array<double, 3> ratio;       // semi-axis scale per (z, y, x)
  double contrast = 0;
};

// Normalized radius of voxel center (iz,iy,ix) for a given diameter.
inline double rho_at(const SynthConfig& cfg, const EllipsoidGeometry& g, double diameter_mm,
                     int iz, int iy, int ix) {
  double s = 0;
  const int idx[3] = {iz, iy, ix};
  for (int k = 0; k < 3; ++k) {
    const double pos = (idx[k] - (cfg.roi_size - 1) / 2.0) * cfg.spacing[static_cast<size_t>(k)];
    const double semi = diameter_mm / 2.0 * g.ratio[static_cast<size_t>(k)];
    const double d = (pos - g.center_mm[static_cast<size_t>(k)]) / semi;
    s += d * d;
  }
  return std::sqrt(s);
}

inline Volume3D render_mask(const SynthConfig& cfg, const EllipsoidGeometry& g,
                            double diameter_mm) {
  Volume3D m(cfg.roi_size, cfg.roi_size, cfg.roi_size, cfg.spacing);
  for (int iz = 0; iz < m.nz; ++iz) {
    for (int iy = 0; iy < m.ny; ++iy) {
      for (int ix = 0; ix < m.nx; ++ix) {
        if (rho_at(cfg, g, diameter_mm, iz, iy, ix) <= 1.0) m.at(iz, iy, ix) = 1.0f;
      }
    }
  }
  return m;
}

inline Volume3D render_intensity(const SynthConfig& cfg, const EllipsoidGeometry& g,
                                 double diameter_mm, RngStream& rng) {
  Volume3D v(cfg.roi_size, cfg.roi_size, cfg.roi_size, cfg.spacing);
  for (int iz = 0; iz < v.nz; ++iz) {
    for (int iy = 0; iy < v.ny; ++iy) {
      for (int ix = 0; ix < v.nx; ++ix) {
        const double rho = rho_at(cfg, g, diameter_mm, iz, iy, ix);
        const double body = 1.0 / (1.0 + std::exp((rho - 1.0) / cfg.edge_softness));
        double val = cfg.background_level + g.contrast * body;
        if (cfg.noise_std > 0) val += rng.gaussian() * cfg.noise_std;
        v.at(iz, iy, ix) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  return v;
}

}  // namespace detail

// One deterministic case from the (seed, index) substream. Geometry is drawn,
// rendered, and measured; if voxelization pushes the measured label off the
// drawn class, fresh geometry is drawn (bounded retries) so the stored label
// always agrees with the measurement rule applied to the stored masks.
inline SynthCase generate_case(uint64_t seed, uint64_t index, const SynthConfig& cfg) {
  RngStream rng(seed, index);
  SynthCase out;
  out.labeled.id = [&] {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "case_%06llu", static_cast<unsigned long long>(index));
    return std::string(buf);
  }();
  out.labeled.split = split_for_index(index);

  const double u_class = rng.uniform();
  EvolutionLabel label = EvolutionLabel::shrinkage;
  if (u_class < cfg.class_priors[0]) {
    label = EvolutionLabel::stability;
  } else if (u_class < cfg.class_priors[0] + cfg.class_priors[1]) {
    label = EvolutionLabel::dilatation;
  }
  const bool missing_t0 = rng.uniform() < cfg.missing_t0_prob;
  const Texture texture = static_cast<Texture>(rng.uniform_int(3));

  for (int attempt = 0; attempt < cfg.max_render_attempts; ++attempt) {
    const double d0 = 2.0 * rng.uniform(cfg.radius_lo_mm, cfg.radius_hi_mm);
    double delta = 0;
    switch (label) {
      case EvolutionLabel::dilatation:
        delta = rng.uniform(cfg.dilatation_delta_mm[0], cfg.dilatation_delta_mm[1]);
        break;
      case EvolutionLabel::shrinkage:
        delta = -rng.uniform(cfg.shrinkage_delta_mm[0], cfg.shrinkage_delta_mm[1]);
        break;
      case EvolutionLabel::stability:
        delta = rng.uniform(cfg.stability_delta_mm[0], cfg.stability_delta_mm[1]);
        if (rng.uniform() < 0.5) delta = -delta;
        break;
    }
    const double d1 = d0 + delta;

    detail::EllipsoidGeometry g;
    for (int k = 0; k < 3; ++k) {
      g.center_mm[static_cast<size_t>(k)] =
          rng.uniform(-cfg.center_jitter_voxels, cfg.center_jitter_voxels) *
          cfg.spacing[static_cast<size_t>(k)];
    }
    // In-plane semi-axes: the major one defines the diameter, the minor one
    // shrinks by up to 20%; the z axis varies freely around round.
    const double minor = rng.uniform(0.8, 1.0);
    const bool y_major = rng.uniform() < 0.5;
    g.ratio[1] = y_major ? 1.0 : minor;
    g.ratio[2] = y_major ? minor : 1.0;
    g.ratio[0] = rng.uniform(0.8, 1.25);
    g.contrast = rng.uniform(cfg.contrast_range[0], cfg.contrast_range[1]);

    Volume3D mask_t1 = detail::render_mask(cfg, g, d1);
    const DiameterMeasurement m1 = measure_diameter(mask_t1);
    if (missing_t0) {
      out.labeled.roi_t0.reset();
      out.labeled.diam_t0_mm.reset();
      out.labeled.diam_t1_mm = m1.value_mm;
      out.labeled.label = label;
      out.labeled.texture = texture;
      out.mask_t0.reset();
      out.mask_t1 = std::move(mask_t1);
      out.labeled.roi_t1 = detail::render_intensity(cfg, g, d1, rng);
      return out;
    }
    Volume3D mask_t0 = detail::render_mask(cfg, g, d0);
    const DiameterMeasurement m0 = measure_diameter(mask_t0);
    if (label_evolution(m0.value_mm, m1.value_mm, cfg.label_threshold_mm) != label) continue;
    out.labeled.diam_t0_mm = m0.value_mm;
    out.labeled.diam_t1_mm = m1.value_mm;
    out.labeled.label = label;
    out.labeled.texture = texture;
    out.mask_t0 = std::move(mask_t0);
    out.mask_t1 = std::move(mask_t1);
    out.labeled.roi_t0 = detail::render_intensity(cfg, g, d0, rng);
    out.labeled.roi_t1 = detail::render_intensity(cfg, g, d1, rng);
    return out;
  }
  throw std::runtime_error("generate_case: no consistent geometry for " + out.labeled.id +
                           " after " + std::to_string(cfg.max_render_attempts) + " attempts");
}

// Worker-thread cap: STMIXER_THREADS if set, else the hardware count.
inline int resolve_threads() {
  if (const char* env = std::getenv("STMIXER_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// n cases from per-case substreams of `seed`. The result is a pure function
// of (cfg, n, seed): cases land at their index regardless of thread count.
// Masks are dropped; callers that need them use generate_case directly.
inline Dataset generate_dataset(const SynthConfig& cfg, int n, uint64_t seed) {
  cfg.validate();
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  Dataset ds;
  ds.cases.resize(static_cast<size_t>(n));
  const int workers = std::min(resolve_threads(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) {
      ds.cases[static_cast<size_t>(i)] =
          std::move(generate_case(seed, static_cast<uint64_t>(i), cfg).labeled);
    }
    return ds;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        ds.cases[static_cast<size_t>(i)] =
            std::move(generate_case(seed, static_cast<uint64_t>(i), cfg).labeled);
      }
    });
  }
  for (auto& t : pool) t.join();
  return ds;
}

}  // namespace stmixer
