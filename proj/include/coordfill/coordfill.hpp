#pragma once

#include "coordfill/ablation.hpp"
#include "coordfill/autodiff.hpp"
#include "coordfill/bench.hpp"
#include "coordfill/checkpoint.hpp"
#include "coordfill/coord_query.hpp"
#include "coordfill/ffc.hpp"
#include "coordfill/fft.hpp"
#include "coordfill/image_io.hpp"
#include "coordfill/losses.hpp"
#include "coordfill/masks.hpp"
#include "coordfill/metrics.hpp"
#include "coordfill/mlp.hpp"
#include "coordfill/model.hpp"
#include "coordfill/nn.hpp"
#include "coordfill/ops.hpp"
#include "coordfill/optim.hpp"
#include "coordfill/param_gen.hpp"
#include "coordfill/synth.hpp"
#include "coordfill/tensor.hpp"
#include "coordfill/train.hpp"
