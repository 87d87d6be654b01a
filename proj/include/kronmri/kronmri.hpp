#pragma once

#include "kronmri/algebra.hpp"
#include "kronmri/blocks.hpp"
#include "kronmri/checkpoint.hpp"
#include "kronmri/checks.hpp"
#include "kronmri/error.hpp"
#include "kronmri/grad_check.hpp"
#include "kronmri/kernels.hpp"
#include "kronmri/kron_layers.hpp"
#include "kronmri/kspace.hpp"
#include "kronmri/kten.hpp"
#include "kronmri/metrics.hpp"
#include "kronmri/rng.hpp"
#include "kronmri/tape.hpp"
#include "kronmri/tensor.hpp"
#include "kronmri/train.hpp"
