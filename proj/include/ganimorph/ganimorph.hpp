#pragma once

#include "error.hpp"
#include "random.hpp"
#include "image.hpp"
#include "toy_data.hpp"
#include "datasets.hpp"
#include "networks.hpp"
#include "losses.hpp"
#include "config.hpp"
#include "eval.hpp"
#include "trainer.hpp"
