/* Copyright 2026 The ul-tta Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include "ultta/config.hpp"
#include "ultta/config_io.hpp"
#include "ultta/engine.hpp"
#include "ultta/errors.hpp"
#include "ultta/gate.hpp"
#include "ultta/head_state.hpp"
#include "ultta/linalg.hpp"
#include "ultta/metrics.hpp"
#include "ultta/rng.hpp"
#include "ultta/stream_io.hpp"
#include "ultta/synth.hpp"
#include "ultta/temperature.hpp"
#include "ultta/updates.hpp"
