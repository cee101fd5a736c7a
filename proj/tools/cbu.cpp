#include "cli.hpp"

int main(int argc, char** argv) { return cbu::cli::run(argc, argv); }
