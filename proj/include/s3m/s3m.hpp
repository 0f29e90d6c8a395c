#pragma once

#include "s3m/core.hpp"
#include "s3m/rng.hpp"
#include "s3m/mealy.hpp"
#include "s3m/distribution.hpp"
#include "s3m/envs.hpp"
#include "s3m/sampling.hpp"
#include "s3m/clustering.hpp"
#include "s3m/mealy_learn.hpp"
#include "s3m/planning.hpp"
#include "s3m/harness.hpp"
