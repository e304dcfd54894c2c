#pragma once

#include "error.hpp"
#include "random.hpp"
#include "parallel.hpp"
#include "model.hpp"
#include "preprocess.hpp"
#include "peakfind.hpp"
#include "peakfit.hpp"
#include "cluster.hpp"
#include "pca.hpp"
#include "metrics.hpp"
#include "pipeline.hpp"
#include "io.hpp"
