#include "fitq/cli.hpp"

int main(int argc, char** argv) { return fitq::cli_main(argc, argv); }
