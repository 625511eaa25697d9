#include "dropclass/cli.hpp"

int main(int argc, char** argv) { return dropclass::run(argc, argv); }
