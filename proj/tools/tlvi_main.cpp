#include "tlvi/cli.hpp"

int main(int argc, char** argv) { return tlvi::run_cli(argc, argv); }
