#include "ttm/io.hpp"

int main(int argc, char** argv) { return ttm::run_cli(argc, argv); }
