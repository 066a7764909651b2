// SPDX-License-Identifier: Apache-2.0
#include "sganet/common.hpp"

#include <iostream>

namespace sganet {

void Warnings::add(std::string msg) {
  if (echo) std::cerr << "warning: " << msg << '\n';
  messages.push_back(std::move(msg));
}

}  // namespace sganet
