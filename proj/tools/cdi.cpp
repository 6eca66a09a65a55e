#include "cdi/cli.hpp"

int main(int argc, char** argv) { return cdi::run_cli(argc, argv); }
