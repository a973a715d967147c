#include <cstdio>
int main() { std::puts("dcnet: placeholder"); }
