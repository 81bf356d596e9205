#pragma once

#include "gnndiar/clustering.hpp"
#include "gnndiar/embedding_io.hpp"
#include "gnndiar/errors.hpp"
#include "gnndiar/evaluation.hpp"
#include "gnndiar/gradcheck.hpp"
#include "gnndiar/linalg.hpp"
#include "gnndiar/losses.hpp"
#include "gnndiar/random.hpp"
#include "gnndiar/refiner.hpp"
#include "gnndiar/session_graph.hpp"
#include "gnndiar/simulator.hpp"
#include "gnndiar/trainer.hpp"
