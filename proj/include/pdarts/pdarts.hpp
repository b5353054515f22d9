// Copyright 2026 The pdarts Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "pdarts/adas.hpp"
#include "pdarts/bilevel.hpp"
#include "pdarts/complexity.hpp"
#include "pdarts/config.hpp"
#include "pdarts/data.hpp"
#include "pdarts/evaluation.hpp"
#include "pdarts/genotype.hpp"
#include "pdarts/pipeline.hpp"
#include "pdarts/plot.hpp"
#include "pdarts/probing.hpp"
#include "pdarts/runtime.hpp"
#include "pdarts/search.hpp"
#include "pdarts/searchspace.hpp"
#include "pdarts/sweep.hpp"
