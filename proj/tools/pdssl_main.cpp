#include "pdssl/cli.hpp"

int main(int argc, char** argv) { return pdssl::cli::run(argc, argv); }
