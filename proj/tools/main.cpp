#include "codexl/cli.hpp"

int main(int argc, char** argv) { return codexl::dispatch(argc, argv); }
