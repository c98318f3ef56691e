#include "zicb/cli_io.hpp"

int main(int argc, char** argv) { return zicb::cli_main(argc, argv); }
