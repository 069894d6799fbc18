#include "flownav/cli.hpp"

int main(int argc, char** argv) { return flownav::cli::run(argc, argv); }
