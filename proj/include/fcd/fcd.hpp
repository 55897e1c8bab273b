#pragma once

#include "fcd/tensor.hpp"
#include "fcd/autograd.hpp"
#include "fcd/ops.hpp"
#include "fcd/conv.hpp"
#include "fcd/scan.hpp"
#include "fcd/nn.hpp"
#include "fcd/data_model.hpp"
#include "fcd/image_io.hpp"
#include "fcd/dataset.hpp"
#include "fcd/synth.hpp"
#include "fcd/encoder.hpp"
#include "fcd/decoder.hpp"
#include "fcd/text_encoder.hpp"
#include "fcd/cmla.hpp"
#include "fcd/objective.hpp"
#include "fcd/metrics.hpp"
#include "fcd/optim.hpp"
#include "fcd/config.hpp"
#include "fcd/model.hpp"
#include "fcd/checkpoint.hpp"
#include "fcd/render.hpp"
#include "fcd/trainer.hpp"
