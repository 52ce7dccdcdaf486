// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace civet {

struct SelfTestCheck {
  std::string name;
  bool passed = false;
  std::string detail;
  double wall_ms = 0.0;
};

/// Fast internal consistency checks: the worked support example, endpoint
/// properties of symmetric supports, finite-difference gradients of the
/// losses, and sampled soundness of interval propagation.
std::vector<SelfTestCheck> run_selftest(std::uint64_t seed = 0);

}  // namespace civet
