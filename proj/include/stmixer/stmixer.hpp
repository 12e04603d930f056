#pragma once

// Umbrella header for the whole library.

#include "stmixer/dataprep.hpp"
#include "stmixer/dataset.hpp"
#include "stmixer/encoder.hpp"
#include "stmixer/errors.hpp"
#include "stmixer/gradcheck.hpp"
#include "stmixer/hloss.hpp"
#include "stmixer/init.hpp"
#include "stmixer/labels.hpp"
#include "stmixer/manifest.hpp"
#include "stmixer/metrics.hpp"
#include "stmixer/model.hpp"
#include "stmixer/rng.hpp"
#include "stmixer/stm.hpp"
#include "stmixer/synthdata.hpp"
#include "stmixer/tape.hpp"
#include "stmixer/tensor.hpp"
#include "stmixer/trainer.hpp"
#include "stmixer/volume.hpp"
