// include/mbndiar/cli.h
//
// Copyright (c)  2026  The mbndiar Authors
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

#ifndef MBNDIAR_CLI_H_
#define MBNDIAR_CLI_H_

#include <iostream>
#include <string>
#include <vector>

namespace mbndiar {

// Process exit codes.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

// Entry point of the mbn-diar tool. `args` excludes the program name.
int CliMain(const std::vector<std::string> &args, std::ostream &out = std::cout,
            std::ostream &err = std::cerr);

}  // namespace mbndiar

#endif  // MBNDIAR_CLI_H_
