#pragma once

#include "agsynth/data.hpp"
#include "agsynth/errors.hpp"
#include "agsynth/eval.hpp"
#include "agsynth/image_io.hpp"
#include "agsynth/losses.hpp"
#include "agsynth/model.hpp"
#include "agsynth/synthesis.hpp"
#include "agsynth/toy.hpp"
#include "agsynth/training.hpp"
