// Builds the Catch2 v3 amalgamated implementation once for all test binaries.
#include <catch2/catch_amalgamated.cpp>
