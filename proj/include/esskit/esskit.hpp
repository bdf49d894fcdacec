#pragma once

// Engines and the shared parameter schema. The HTTP service lives in
// esskit/service.hpp so that library users do not pull in the server.

#include "esskit/api.hpp"
#include "esskit/error.hpp"
#include "esskit/ess.hpp"
#include "esskit/inference.hpp"
#include "esskit/measures.hpp"
#include "esskit/numerics.hpp"
#include "esskit/simlab.hpp"
#include "esskit/version.hpp"
