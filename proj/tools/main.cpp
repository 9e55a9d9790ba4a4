#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::fprintf(stderr, "cfield: command line not wired up yet\n");
  return 1;
}
