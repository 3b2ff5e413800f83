/*
 * Copyright 2026 The PCA Pipeline Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "pca/adapt.hpp"
#include "pca/backbone.hpp"
#include "pca/chat.hpp"
#include "pca/config.hpp"
#include "pca/errors.hpp"
#include "pca/evaluate.hpp"
#include "pca/gradcheck.hpp"
#include "pca/knowledge_cache.hpp"
#include "pca/matrix.hpp"
#include "pca/metrics.hpp"
#include "pca/nn.hpp"
#include "pca/pcak.hpp"
#include "pca/percept.hpp"
#include "pca/pipeline.hpp"
#include "pca/rng.hpp"
#include "pca/schedule.hpp"
#include "pca/synth.hpp"
#include "pca/tape.hpp"
#include "pca/train.hpp"
