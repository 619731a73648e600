#pragma once

#include "dgquant/autodiff.hpp"
#include "dgquant/checkpoint.hpp"
#include "dgquant/config.hpp"
#include "dgquant/data.hpp"
#include "dgquant/decorrelation.hpp"
#include "dgquant/encoder.hpp"
#include "dgquant/imageio.hpp"
#include "dgquant/metrics.hpp"
#include "dgquant/model.hpp"
#include "dgquant/nn.hpp"
#include "dgquant/plots.hpp"
#include "dgquant/prototypes.hpp"
#include "dgquant/quantizer.hpp"
#include "dgquant/reconstruction.hpp"
#include "dgquant/splitter.hpp"
#include "dgquant/tensor.hpp"
#include "dgquant/train.hpp"
