#pragma once

#include "lgm/core.hpp"
#include "lgm/rng.hpp"
#include "lgm/spectral.hpp"
#include "lgm/kernels.hpp"
#include "lgm/targets.hpp"
#include "lgm/samplers.hpp"
#include "lgm/adaptation.hpp"
#include "lgm/diagnostics.hpp"
#include "lgm/hyper.hpp"
