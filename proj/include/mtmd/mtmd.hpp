/* Copyright 2026 The MTMD Authors. All Rights Reserved.

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

#include "mtmd/adapt.hpp"
#include "mtmd/baseline.hpp"
#include "mtmd/binary_io.hpp"
#include "mtmd/checkpoint.hpp"
#include "mtmd/config.hpp"
#include "mtmd/dataset.hpp"
#include "mtmd/embedding_io.hpp"
#include "mtmd/errors.hpp"
#include "mtmd/eval.hpp"
#include "mtmd/expert.hpp"
#include "mtmd/model_config.hpp"
#include "mtmd/numkernel.hpp"
#include "mtmd/report.hpp"
#include "mtmd/schema.hpp"
#include "mtmd/teacher.hpp"
#include "mtmd/towers.hpp"
#include "mtmd/trainer.hpp"
