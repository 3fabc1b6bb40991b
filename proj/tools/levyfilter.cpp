#include "levyfilter/cli.hpp"

int main(int argc, char** argv) { return levyfilter::cli::run(argc, argv); }
