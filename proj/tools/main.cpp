#include "cli.hpp"

int main(int argc, char** argv) { return s2sk::cli::run(argc, argv); }
