#include "doctest.h"
#include "rvm/selfcheck.hpp"

TEST_SUITE("selfcheck") {
  TEST_CASE("every built-in check passes") {
    const auto results = rvm::run_selfcheck();
    CHECK(results.size() == 9);
    for (const auto& r : results) {
      CAPTURE(r.name);
      CAPTURE(r.detail);
      CHECK(r.passed);
    }
  }
}
