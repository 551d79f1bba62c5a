#pragma once

#include "bmoe/checkpoint.hpp"
#include "bmoe/data/io.hpp"
#include "bmoe/data/synthetic.hpp"
#include "bmoe/encoders.hpp"
#include "bmoe/gradcheck.hpp"
#include "bmoe/losses.hpp"
#include "bmoe/m3e.hpp"
#include "bmoe/metrics.hpp"
#include "bmoe/model.hpp"
#include "bmoe/training.hpp"
