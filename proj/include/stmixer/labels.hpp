#pragma once

#include <stdexcept>
#include <string>

namespace stmixer {

// Evolution classes of a nodule between consecutive scans. The integer codes
// are part of the manifest format and must not be reordered.
enum class EvolutionLabel : int {
  stability = 0,
  dilatation = 1,
  shrinkage = 2,
};

inline const char* to_string(EvolutionLabel y) {
  switch (y) {
    case EvolutionLabel::stability: return "stability";
    case EvolutionLabel::dilatation: return "dilatation";
    case EvolutionLabel::shrinkage: return "shrinkage";
  }
  return "?";
}

inline EvolutionLabel evolution_from_code(int code) {
  if (code < 0 || code > 2) {
    throw std::invalid_argument("evolution label code out of range: " + std::to_string(code));
  }
  return static_cast<EvolutionLabel>(code);
}

// Nodule texture type on CT; carried through for per-type metric grouping.
enum class Texture : int {
  ggn = 0,
  solid = 1,
  part_solid = 2,
};

inline const char* to_string(Texture t) {
  switch (t) {
    case Texture::ggn: return "ggn";
    case Texture::solid: return "solid";
    case Texture::part_solid: return "part_solid";
  }
  return "?";
}

inline Texture texture_from_string(const std::string& s) {
  if (s == "ggn") return Texture::ggn;
  if (s == "solid") return Texture::solid;
  if (s == "part_solid") return Texture::part_solid;
  throw std::invalid_argument("unknown texture type: " + s);
}

}  // namespace stmixer
