#include "doctest.h"
#include "rvm/selfcheck.hpp"

TEST_SUITE("gradients") {
  TEST_CASE("analytic gradients match central differences") {
    for (const auto& gc : rvm::gradient_cases()) {
      CAPTURE(gc.name);
      CHECK(gc.run() < 1e-4);
    }
  }
}
