#pragma once

#include "layoutdm/assignment.hpp"
#include "layoutdm/checkpoint.hpp"
#include "layoutdm/condition.hpp"
#include "layoutdm/corpus.hpp"
#include "layoutdm/denoiser.hpp"
#include "layoutdm/diffusion.hpp"
#include "layoutdm/error.hpp"
#include "layoutdm/layout.hpp"
#include "layoutdm/metrics.hpp"
#include "layoutdm/quantizer.hpp"
#include "layoutdm/random.hpp"
#include "layoutdm/relations.hpp"
#include "layoutdm/sampler.hpp"
#include "layoutdm/sequence.hpp"
#include "layoutdm/svg.hpp"
#include "layoutdm/trainer.hpp"
