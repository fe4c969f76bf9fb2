#include "toolnet/cli.hpp"

int main(int argc, char** argv) { return toolnet::cli::run(argc, argv); }
