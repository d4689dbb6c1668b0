#include "drgo_cli.hpp"

int main(int argc, char** argv) { return drgo::cli::run(argc, argv); }
