#include "voxdec/cli.hpp"

int main(int argc, char** argv) { return voxdec::cli::run(argc, argv); }
