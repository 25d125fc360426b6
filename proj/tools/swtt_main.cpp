#include "swtt/cli.hpp"

int main(int argc, char** argv) { return swtt::cli_dispatch(argc, argv); }
