#include "movieseq/cli.hpp"

int main(int argc, char** argv) { return movieseq::run_cli(argc, argv); }
