#pragma once

#include <pemal/ablation.hpp>
#include <pemal/dataset.hpp>
#include <pemal/feature_hash.hpp>
#include <pemal/feature_mask.hpp>
#include <pemal/features.hpp>
#include <pemal/metrics.hpp>
#include <pemal/model_io.hpp>
#include <pemal/models.hpp>
#include <pemal/pe_parser.hpp>
#include <pemal/scaling.hpp>
