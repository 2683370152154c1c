#pragma once

#include "wsselect/data_model.hpp"
#include "wsselect/end_model.hpp"
#include "wsselect/error.hpp"
#include "wsselect/label_models.hpp"
#include "wsselect/neighbor_graph.hpp"
#include "wsselect/selectors.hpp"
#include "wsselect/synth_theory.hpp"
