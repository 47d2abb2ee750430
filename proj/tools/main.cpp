#include "gustuq/cli.hpp"

int main(int argc, char** argv) { return gustuq::cli::run(argc, argv); }
