#include "wsselect/cli.hpp"

int main(int argc, char** argv) { return wss::cli::run(argc, argv); }
