#include "floodvision/cli.hpp"

int main(int argc, char** argv) { return floodvision::cli::run(argc, argv); }
