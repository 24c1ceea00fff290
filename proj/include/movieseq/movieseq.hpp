#pragma once

#include "movieseq/error.hpp"
#include "movieseq/tensor.hpp"
#include "movieseq/visual.hpp"
#include "movieseq/vocab.hpp"
#include "movieseq/sequence.hpp"
#include "movieseq/nn.hpp"
#include "movieseq/encoders.hpp"
#include "movieseq/lm.hpp"
#include "movieseq/checkpoint.hpp"
#include "movieseq/metrics.hpp"
#include "movieseq/instructions.hpp"
#include "movieseq/adapters.hpp"
#include "movieseq/config.hpp"
#include "movieseq/manifest.hpp"
#include "movieseq/pipeline.hpp"
