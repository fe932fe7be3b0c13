#include <stdexcept>
#include <string>
#include <vector>

#include "cdlab/parallel.hpp"
#include "doctest.h"

using namespace cdlab;

TEST_CASE("for_each_index visits every index once in both modes") {
  for (Exec e : {Exec::serial, Exec::parallel}) {
    std::vector<int> hits(1000, 0);
    for_each_index(hits.size(), e, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
  }
}

TEST_CASE("the exception of the lowest failing index escapes") {
  for (Exec e : {Exec::serial, Exec::parallel}) {
    try {
      for_each_index(100, e, [](std::size_t i) {
        if (i == 17 || i == 63) throw std::runtime_error(std::to_string(i));
      });
      FAIL("no exception");
    } catch (const std::runtime_error& err) {
      CHECK(std::string(err.what()) == "17");
    }
  }
}

TEST_CASE("thread cap") {
  set_thread_cap(1);
  CHECK(thread_cap() == 1);
  set_thread_cap(-3);
  CHECK(thread_cap() >= 1);
  set_thread_cap(0);
  CHECK(thread_cap() >= 1);
}

TEST_CASE("chunk_count") {
  CHECK(chunk_count(0) == 0);
  CHECK(chunk_count(1) == 1);
  CHECK(chunk_count(kReductionChunk) == 1);
  CHECK(chunk_count(kReductionChunk + 1) == 2);
}
