#include "stemdeg/cli.hpp"

int main(int argc, char** argv) { return stemdeg::run_cli(argc, argv); }
