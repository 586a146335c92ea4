#include "midiff/cli.hpp"

int main(int argc, char** argv) { return midiff::run_cli(argc, argv); }
