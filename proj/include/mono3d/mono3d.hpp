// Copyright 2026 The mono3d Authors. All Rights Reserved.
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

#include "mono3d/anchors.hpp"
#include "mono3d/common.hpp"
#include "mono3d/eval.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/inference.hpp"
#include "mono3d/kitti_io.hpp"
#include "mono3d/losses.hpp"
#include "mono3d/nnops.hpp"
#include "mono3d/tensor.hpp"
