#pragma once

// Umbrella header.

#include "gen3d/adversarial.hpp"
#include "gen3d/analytic_fields.hpp"
#include "gen3d/camera.hpp"
#include "gen3d/cli.hpp"
#include "gen3d/config.hpp"
#include "gen3d/data.hpp"
#include "gen3d/diffcore.hpp"
#include "gen3d/discriminator.hpp"
#include "gen3d/errors.hpp"
#include "gen3d/evaluation.hpp"
#include "gen3d/field.hpp"
#include "gen3d/gradcheck.hpp"
#include "gen3d/image.hpp"
#include "gen3d/meshing.hpp"
#include "gen3d/nn.hpp"
#include "gen3d/rendering.hpp"
#include "gen3d/rng.hpp"
#include "gen3d/surface.hpp"
