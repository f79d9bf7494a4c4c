#pragma once

#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "shimer/error.hpp"

#ifndef SHIMER_FIXTURE_DIR
#define SHIMER_FIXTURE_DIR "tests/fixtures"
#endif

namespace shimer::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(SHIMER_FIXTURE_DIR) / name;
}

template <class F>
ErrorCode error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an shimer::Error");
  return ErrorCode::ContractViolation;
}

}  // namespace shimer::testing

#define CHECK_ERROR(expr, code) \
  CHECK(::shimer::testing::error_of([&] { (void)(expr); }) == (code))
