#include "vsep/cli.hpp"

int main(int argc, char** argv) { return vsep::cli::run(argc, argv); }
