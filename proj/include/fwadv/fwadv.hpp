#pragma once

// Umbrella header for the fwadv library.

#include "fwadv/attacks.hpp"
#include "fwadv/ball.hpp"
#include "fwadv/dataset.hpp"
#include "fwadv/error.hpp"
#include "fwadv/frank_wolfe.hpp"
#include "fwadv/group_spec.hpp"
#include "fwadv/harness.hpp"
#include "fwadv/image_io.hpp"
#include "fwadv/linalg.hpp"
#include "fwadv/models.hpp"
#include "fwadv/norm_balls.hpp"
#include "fwadv/random.hpp"
#include "fwadv/tensor.hpp"
