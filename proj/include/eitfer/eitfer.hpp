#pragma once

#include "eitfer/errors.hpp"
#include "eitfer/mesh.hpp"
#include "eitfer/forward.hpp"
#include "eitfer/sensitivity.hpp"
#include "eitfer/frames.hpp"
#include "eitfer/recon.hpp"
#include "eitfer/phantom.hpp"
#include "eitfer/render.hpp"
#include "eitfer/pipeline.hpp"
