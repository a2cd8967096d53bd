void f() {
    int x = 1;
}
