#include "provwatch/cli.hpp"

int main(int argc, char** argv) { return provwatch::cli::run_cli(argc, argv); }
