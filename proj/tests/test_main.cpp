#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "bnkit/kernels.hpp"

int main(int argc, char** argv) {
  bnkit::kernels::tune_host_allocator();
  return doctest::Context(argc, argv).run();
}
