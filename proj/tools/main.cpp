#include "cli.hpp"

int main(int argc, char** argv) { return descsel::cli::run(argc, argv); }
