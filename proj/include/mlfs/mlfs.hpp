#pragma once

#include "arch.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "distill.hpp"
#include "fdsuite.hpp"
#include "gradcheck.hpp"
#include "lora.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "synthetic.hpp"
#include "task.hpp"
#include "tensor.hpp"
#include "trainer.hpp"
