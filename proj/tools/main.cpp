#include "postop/bench.hpp"

int main(int argc, char** argv) { return postop::run_cli(argc, argv); }
