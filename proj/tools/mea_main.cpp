#include "mea/cli.hpp"

int main(int argc, char** argv) { return mea::cli::run(argc, argv); }
