#include "sllab/cli_app.hpp"

int main(int argc, char** argv) {
    return sllab::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
