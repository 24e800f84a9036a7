#pragma once

// Umbrella header for the qforest library: differentiable decision forests
// with sparse attention over features, trained end to end by gradient
// descent.

#include "qforest/attention.hpp"
#include "qforest/data.hpp"
#include "qforest/errors.hpp"
#include "qforest/forest.hpp"
#include "qforest/heatmap.hpp"
#include "qforest/importance.hpp"
#include "qforest/loss.hpp"
#include "qforest/matrix.hpp"
#include "qforest/model_io.hpp"
#include "qforest/optimizer.hpp"
#include "qforest/rng.hpp"
#include "qforest/trainer.hpp"
