#include <cstdio>

int main() {
  std::puts("loqt: subcommands not wired up yet");
  return 1;
}
