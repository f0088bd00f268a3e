#include "lidiff/cli.hpp"

int main(int argc, char** argv) { return lidiff::run_cli(argc, argv); }
