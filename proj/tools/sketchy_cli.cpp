#include "sketchy/harness.hpp"

int main(int argc, char** argv) { return sketchy::cli_main(argc, argv); }
