#include <cstdio>
#include <exception>

#include "iontrap/verification.hpp"

int main() {
  try {
    const auto results = iontrap::run_verification();
    int failed = 0;
    for (const auto &r : results) {
      std::printf("%s  [%2d] %-28s %s\n", r.pass ? "PASS" : "FAIL",
                  r.criterion, r.name.c_str(), r.detail.c_str());
      if (!r.pass)
        ++failed;
    }
    std::printf("%zu/%zu checks passed\n", results.size() - failed,
                results.size());
    return failed == 0 ? 0 : 1;
  } catch (const std::exception &e) {
    std::fprintf(stderr, "acceptance run aborted: %s\n", e.what());
    return 2;
  }
}
