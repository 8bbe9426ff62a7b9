#include "slt_lab/cli.hpp"

int main(int argc, char** argv) { return slt::run_cli(argc, argv); }
