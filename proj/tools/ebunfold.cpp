#include "ebunfold/cli.hpp"

int main(int argc, char** argv) { return ebunfold::run_cli(argc, argv); }
