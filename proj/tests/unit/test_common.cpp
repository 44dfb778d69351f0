// Copyright 2026 The DataEngine Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <sstream>

#include "dataengine/common.hpp"
#include "dataengine/rng.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace dataengine;

TEST_SUITE("common") {
  TEST_CASE("sha256 matches the published test vectors") {
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("string helpers") {
    CHECK(trim("  a b \t\n") == "a b");
    CHECK(trim("   ").empty());
    CHECK(to_lower("MiXeD 1") == "mixed 1");
    CHECK(split_whitespace("  one two\tthree\n") == std::vector<std::string>{"one", "two", "three"});
    CHECK(split_whitespace("").empty());
  }

  TEST_CASE("for_each_line skips blank lines and keeps physical numbering") {
    std::istringstream in("a\r\n\n  \nb\n");
    std::vector<std::pair<std::string, std::size_t>> seen;
    for_each_line(in, [&](const std::string& l, std::size_t n) { seen.emplace_back(l, n); });
    REQUIRE(seen.size() == 2);
    CHECK(seen[0] == std::pair<std::string, std::size_t>{"a", 1});
    CHECK(seen[1] == std::pair<std::string, std::size_t>{"b", 4});
  }

  TEST_CASE("atomic write replaces and append_line appends") {
    testing::TempDir dir;
    const auto p = dir / "sub/file.txt";
    write_file_atomic(p, "one");
    write_file_atomic(p, "two");
    CHECK(read_file(p) == "two");
    CHECK_FALSE(std::filesystem::exists(dir / "sub/file.txt.tmp"));
    append_line(dir / "log", "x");
    append_line(dir / "log", "y");
    CHECK(read_file(dir / "log") == "x\ny\n");
    CHECK_THROWS_AS(read_file(dir / "missing"), IoError);
  }

  TEST_CASE("parse errors carry their line") {
    ParseError e("bad", 7);
    CHECK(e.line() == 7);
    CHECK(std::string(e.what()) == "line 7: bad");
  }
}

TEST_SUITE("rng") {
  TEST_CASE("engine is the standard 64-bit Mersenne twister") {
    // Reference value for the default seed from the C++ standard.
    Rng rng(5489u);
    for (int i = 1; i < 10000; ++i) rng.next();
    CHECK(rng.next() == 9981545732273789042ULL);
    CHECK(rng.draws() == 10000);
  }

  TEST_CASE("derived seeds are stable and label-sensitive") {
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    Rng parent(42);
    parent.next();
    // Forks depend on the seed only, not on draws already taken.
    CHECK(parent.fork("x").next() == Rng(42).fork("x").next());
  }

  TEST_CASE("below is unbiased over a small range") {
    Rng rng(3);
    std::vector<int> counts(6, 0);
    const int n = 60000;
    for (int i = 0; i < n; ++i) ++counts[rng.below(6)];
    for (int c : counts) CHECK(std::abs(c - n / 6) < 400);
    CHECK(rng.below(1) == 0);
  }

  TEST_CASE("normal has zero mean and unit variance") {
    Rng rng(9);
    double sum = 0, sq = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
      const double x = rng.normal();
      sum += x;
      sq += x * x;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sq / n - 1.0) < 0.03);
  }

  TEST_CASE("uniform01 stays in [0, 1)") {
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
      const double u = rng.uniform01();
      CHECK((u >= 0.0 && u < 1.0));
    }
  }
}
