#include "tlc/cli.hpp"

int main(int argc, char** argv) { return tlc::cli::dispatch(argc, argv); }
