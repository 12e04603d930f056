#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stmixer/labels.hpp"
#include "stmixer/volume.hpp"

namespace stmixer {

enum class Split : int {
  train = 0,
  val = 1,
  test = 2,
};

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split: " + s);
}

struct LabeledCase {
  std::string id;
  std::optional<Volume3D> roi_t0;  // absent when the subject has no prior scan
  Volume3D roi_t1;
  EvolutionLabel label = EvolutionLabel::stability;
  Texture texture = Texture::solid;
  std::optional<double> diam_t0_mm;
  double diam_t1_mm = 0;
  Split split = Split::train;
};

struct Dataset {
  std::vector<LabeledCase> cases;

  std::vector<int> indices(Split s) const {
    std::vector<int> out;
    for (size_t i = 0; i < cases.size(); ++i) {
      if (cases[i].split == s) out.push_back(static_cast<int>(i));
    }
    return out;
  }
};

}  // namespace stmixer
