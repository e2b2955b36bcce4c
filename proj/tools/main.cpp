#include "lensmtf/cli.hpp"

int main(int argc, char** argv) { return lensmtf::cli::run(argc, argv); }
