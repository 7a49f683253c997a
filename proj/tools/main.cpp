#include "uqseg/cli.hpp"

int main(int argc, char** argv) { return uqseg::cli_main(argc, argv); }
