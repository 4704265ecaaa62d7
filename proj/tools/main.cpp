#include <cstdio>

int main() {
    std::puts("tinyvlm: subcommands pending");
    return 0;
}
